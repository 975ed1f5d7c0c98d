"""Random instance builders shared by the tests."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar

from ipsac.polar import block_matrix
from ipsac.scene import ClutterPatch, TargetSpec, make_scene, sample_comm_channels


def unit_blocks(rng, n: int) -> np.ndarray:
    p = rng.standard_normal((n, 2))
    return (p / np.linalg.norm(p, axis=1, keepdims=True)).reshape(-1)


def pol(rng, n: int) -> np.ndarray:
    return block_matrix(unit_blocks(rng, n))


def crandn(rng, *shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_psd(rng, n: int, rank: int | None = None) -> np.ndarray:
    G = crandn(rng, n, rank or n)
    return G @ G.conj().T / (rank or n)


def random_scene(rng, n_t: int, n_r: int, n_clutter: int = 2, sigma_s2: float = 1.0, chi: float = 0.1,
                 beta0: float = 1.0, clutter_var: float = 0.5, target_rank: int | None = None):
    target = TargetSpec(rng.uniform(-1.2, 1.2), beta0, random_psd(rng, 4, target_rank))
    clutter = [ClutterPatch(rng.uniform(-1.4, 1.4), clutter_var, random_psd(rng, 4)) for _ in range(n_clutter)]
    return make_scene(n_t, n_r, chi, target, clutter, sigma_s2)


def random_waveform(rng, n: int, cols: int, power: float = 1.0) -> np.ndarray:
    F = crandn(rng, n, cols)
    return F * np.sqrt(power) / np.linalg.norm(F)


def random_channels(K: int, n_t: int, seed: int, chi: float = 0.1):
    return sample_comm_channels(K, n_t, chi_ant=chi, chi_user=chi, seed=seed)


def grid_dual_oracle(d, u, r):
    """Single-constraint dual maximizer by grid search refined with bounded Brent."""
    def neg_dual(m):
        z = d.reshape(-1, 2) + m * u.reshape(-1, 2)
        return np.linalg.norm(z, axis=1).sum() - m * r

    grid = np.linspace(0, 1e3, 200001)
    vals = np.array([neg_dual(m) for m in grid[::100]])
    i = int(np.argmin(vals)) * 100
    lo, hi = grid[max(i - 100, 0)], grid[min(i + 100, grid.size - 1)]
    return minimize_scalar(neg_dual, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10}).x
