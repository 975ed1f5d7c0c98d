"""CSV emission and median/IQR plots."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .runner import ResultRow

CSV_HEADER = ("baseline", "sweep_axis", "sweep_value", "seed", "nmse_db", "target_sinr_db", "min_user_sinr_db",
              "sum_rate", "outer_iters", "wall_s", "feasible")

LABELS = {
    "static": "Static",
    "tx_only": "Tx-only",
    "rx_only": "Rx-only",
    "tx_rx": "Tx-Rx",
    "dual_1x": "Dual-pol 1x",
    "dual_2x": "Dual-pol 2x",
}

AXIS_LABELS = {
    "gamma_th_db": "User SINR threshold [dB]",
    "chi_ant": "Antenna XPD",
    "tx_snr_db": "Transmit SNR [dB]",
    "n_antennas": "Number of antennas",
    "target_angle_deg": "Target angle [deg]",
}

# (sweep axis, objective) -> (file stem, plotted column)
FAMILIES = {
    ("gamma_th_db", "mse"): ("nmse_vs_threshold", "nmse_db"),
    ("gamma_th_db", "sinr"): ("sinr_vs_threshold", "target_sinr_db"),
    ("target_angle_deg", "sinr"): ("sinr_vs_angle", "target_sinr_db"),
    ("target_angle_deg", "mse"): ("nmse_vs_angle", "nmse_db"),
    ("chi_ant", "mse"): ("nmse_vs_xpd", "nmse_db"),
    ("chi_ant", "sinr"): ("sinr_vs_xpd", "target_sinr_db"),
    ("tx_snr_db", "mse"): ("nmse_vs_snr", "nmse_db"),
    ("tx_snr_db", "sinr"): ("sinr_vs_snr", "target_sinr_db"),
    ("n_antennas", "mse"): ("nmse_vs_antennas", "nmse_db"),
    ("n_antennas", "sinr"): ("sinr_vs_antennas", "target_sinr_db"),
}


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(rows, path) -> Path:
    """Write rows with ``repr`` floats so that parsing gives identical values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
    return path


def read_csv(path) -> list[ResultRow]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {rd.fieldnames}")
        for d in rd:
            out.append(ResultRow(
                baseline=d["baseline"],
                sweep_axis=d["sweep_axis"],
                sweep_value=float(d["sweep_value"]),
                seed=int(d["seed"]),
                nmse_db=float(d["nmse_db"]),
                target_sinr_db=float(d["target_sinr_db"]),
                min_user_sinr_db=float(d["min_user_sinr_db"]),
                sum_rate=float(d["sum_rate"]),
                outer_iters=int(d["outer_iters"]),
                wall_s=float(d["wall_s"]),
                feasible=d["feasible"] == "1",
            ))
    return out


def aggregate(rows, column: str, feasible_only: bool = True) -> dict:
    """``{baseline: (values, median, q25, q75)}`` over seeds at each sweep value."""
    out = {}
    for b in dict.fromkeys(r.baseline for r in rows):
        sel = [r for r in rows if r.baseline == b]
        xs = sorted(set(r.sweep_value for r in sel))
        med, lo, hi = [], [], []
        for x in xs:
            v = np.array([getattr(r, column) for r in sel
                          if r.sweep_value == x and (r.feasible or not feasible_only)], dtype=float)
            v = v[np.isfinite(v)]
            if v.size:
                q = np.percentile(v, [50, 25, 75])
            else:
                q = [math.nan] * 3
            med.append(q[0])
            lo.append(q[1])
            hi.append(q[2])
        out[b] = (np.array(xs), np.array(med), np.array(lo), np.array(hi))
    return out


def _plot(stats: dict, xlabel: str, ylabel: str, path: Path, x_from=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for b, (x, med, lo, hi) in stats.items():
        xx = x if x_from is None else x_from[b]
        ax.plot(xx, med, marker="o", label=LABELS.get(b, b))
        ax.fill_between(xx, lo, hi, alpha=0.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def emit_outputs(rows, cfg: ExperimentConfig) -> list[Path]:
    """Write the CSV and the plot files for the configured figure family."""
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to write")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_csv(rows, out / cfg.csv_name)]
    if not cfg.plots:
        return paths
    stem, column = FAMILIES[(cfg.sweep_axis, cfg.objective)]
    ylabel = "NMSE [dB]" if column == "nmse_db" else "Target SINR [dB]"
    stats = aggregate(rows, column)
    paths.append(_plot(stats, AXIS_LABELS[cfg.sweep_axis], ylabel, out / f"{cfg.name}_{stem}.pdf"))
    if cfg.objective == "sinr" and cfg.sweep_axis == "gamma_th_db" and cfg.scene.K > 0:
        rate = aggregate(rows, "sum_rate")
        x_from = {b: rate[b][1] for b in stats}
        paths.append(_plot(stats, "Sum rate [bps/Hz]", ylabel, out / f"{cfg.name}_sinr_vs_sum_rate.pdf", x_from))
    return paths
