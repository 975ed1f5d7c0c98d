"""Monte-Carlo sweep execution."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import prepare_case
from .config import ExperimentConfig
from .conic import INFEASIBLE, SolverSettings
from .errors import IpsacError
from .mm import alternate_full

log = logging.getLogger(__name__)

# Feasible rows must meet every user target up to this relative slack.
FEASIBLE_SLACK = 1e-4


@dataclass
class ResultRow:
    baseline: str
    sweep_axis: str
    sweep_value: float
    seed: int
    nmse_db: float
    target_sinr_db: float
    min_user_sinr_db: float
    sum_rate: float
    outer_iters: int
    wall_s: float
    feasible: bool
    user_sinr_db: tuple = field(default=(), compare=False)
    error: str = field(default="", compare=False)


def _db(x: float) -> float:
    return 10.0 * np.log10(x) if x > 0 else -np.inf


def run_case(cfg: ExperimentConfig, baseline: str, value: float, seed: int) -> ResultRow:
    """One optimization run; solver and recovery failures become infeasible rows."""
    t0 = time.perf_counter()
    case = prepare_case(cfg, baseline, value, seed)
    dump = None
    if cfg.dump_conic:
        dump = Path(cfg.out_dir) / "conic" / f"{baseline}_{cfg.sweep_axis}{value:g}_s{seed}.cbf"
    nan = float("nan")
    try:
        rep = alternate_full(case.problem, case.init, case.baseline.flags, outer_iters=cfg.outer_iters,
                             tol=cfg.outer_tol, settings=SolverSettings(), i_max=cfg.inner_iters, dump_path=dump)
    except IpsacError as exc:
        log.warning("%s value=%s seed=%s failed: %s", baseline, value, seed, exc)
        wall = time.perf_counter() - t0 if cfg.record_wall_time else 0.0
        return ResultRow(baseline, cfg.sweep_axis, float(value), seed, nan, nan, nan, nan, 0, wall, False,
                         error=str(exc))
    wall = time.perf_counter() - t0 if cfg.record_wall_time else 0.0
    if rep.F is None:
        # a certified infeasible problem is a result, anything else a solver failure
        err = "" if rep.status == INFEASIBLE else rep.status
        return ResultRow(baseline, cfg.sweep_axis, float(value), seed, nan, nan, nan, nan, rep.outer_iters, wall,
                         False, error=err)
    g = np.asarray(rep.user_sinrs, dtype=float)
    feasible = rep.feasible and bool(np.all(g >= case.problem.gamma_th * (1 - FEASIBLE_SLACK)))
    return ResultRow(
        baseline=baseline,
        sweep_axis=cfg.sweep_axis,
        sweep_value=float(value),
        seed=seed,
        nmse_db=float(rep.nmse_db),
        target_sinr_db=float(rep.target_sinr_db),
        min_user_sinr_db=float(_db(g.min())) if g.size else float("inf"),
        sum_rate=float(rep.sum_rate),
        outer_iters=rep.outer_iters,
        wall_s=wall,
        feasible=feasible,
        user_sinr_db=tuple(float(_db(x)) for x in g),
    )


def _task(args):
    return run_case(*args)


def tasks(cfg: ExperimentConfig) -> list:
    """Work items in output order: baseline, then sweep value, then seed."""
    return [(cfg, b, v, s) for b in cfg.baselines for v in cfg.sweep_values for s in cfg.seeds]


def run_experiment(cfg: ExperimentConfig, progress=None) -> list[ResultRow]:
    """Run every (baseline, sweep value, seed) and return rows in a fixed order."""
    work = tasks(cfg)
    rows = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for i, row in enumerate(pool.map(_task, work)):
                rows.append(row)
                if progress:
                    progress(i + 1, len(work), row)
    else:
        for i, w in enumerate(work):
            row = _task(w)
            rows.append(row)
            if progress:
                progress(i + 1, len(work), row)
    return rows
