"""Joint waveform and polarization design for polarimetric ISAC arrays."""

__version__ = "0.1.0"
