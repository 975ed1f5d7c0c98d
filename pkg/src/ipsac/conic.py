"""Thin solver-facing layer over cvxpy problems.

A :class:`ConicProblem` bundles a cvxpy problem with labelled constraints so
that callers can audit its structure, solve it with typed statuses and dump
it in the CBF interchange format.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max-iter"
NUMERICAL_ERROR = "numerical-error"

_STATUS = {
    cp.OPTIMAL: OPTIMAL,
    cp.OPTIMAL_INACCURATE: OPTIMAL,
    cp.INFEASIBLE: INFEASIBLE,
    cp.INFEASIBLE_INACCURATE: INFEASIBLE,
    cp.UNBOUNDED: UNBOUNDED,
    cp.UNBOUNDED_INACCURATE: UNBOUNDED,
    cp.USER_LIMIT: MAX_ITER,
}


@dataclass
class SolverSettings:
    solver: str = "CVXOPT"
    tol: float = 1e-8
    max_iters: int = 200
    fallback: tuple = ("CVXOPT:robust", "CLARABEL")

    def options(self, name: str) -> dict:
        """Solver keyword arguments; ``CVXOPT:robust`` selects the LDL-based KKT solver."""
        if name == "CLARABEL":
            return dict(tol_gap_abs=self.tol, tol_gap_rel=self.tol, tol_feas=self.tol, max_iter=self.max_iters)
        if name == "SCS":
            return dict(eps_abs=self.tol, eps_rel=self.tol, max_iters=max(self.max_iters, 20000))
        if name.startswith("CVXOPT"):
            opts = dict(abstol=self.tol, reltol=self.tol, feastol=self.tol, max_iters=self.max_iters)
            if name.endswith(":robust"):
                opts["kktsolver"] = "robust"
            return opts
        return {}


@dataclass
class ConicProblem:
    """A cvxpy problem plus the labels of its constraint blocks."""

    problem: cp.Problem
    variables: dict
    labels: list
    context: dict = field(default_factory=dict)

    def count(self, kind: str) -> int:
        return sum(1 for lab in self.labels if lab.split(":")[0] == kind)

    @property
    def n_constraints(self) -> int:
        return len(self.problem.constraints)


@dataclass
class ConicResult:
    status: str
    value: float | None
    values: dict
    solver: str
    solve_time: float
    raw_status: str = ""
    inaccurate: bool = False

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def solve_conic(problem: ConicProblem, settings: SolverSettings | None = None,
                dump_path: str | Path | None = None) -> ConicResult:
    """Solve and map the outcome to one of the typed statuses.

    Solver exceptions never propagate; they surface as ``numerical-error``
    after every configured solver has been tried.
    """
    settings = settings or SolverSettings()
    if dump_path is not None:
        dump_cbf(problem, dump_path)
    chain = (settings.solver,) + tuple(s for s in settings.fallback if s != settings.solver)
    raw, used, t0 = "", settings.solver, time.perf_counter()
    status = NUMERICAL_ERROR
    for name in chain:
        used = name
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                problem.problem.solve(solver=name.split(":")[0], **settings.options(name))
            raw = problem.problem.status
            status = _STATUS.get(raw, NUMERICAL_ERROR)
        except (cp.error.SolverError, ValueError, ArithmeticError) as exc:
            log.debug("solver %s failed: %s", name, exc)
            raw, status = f"error: {exc}", NUMERICAL_ERROR
        if status in (OPTIMAL, INFEASIBLE, UNBOUNDED):
            break
    elapsed = time.perf_counter() - t0
    values = {}
    if status == OPTIMAL:
        for k, v in problem.variables.items():
            if isinstance(v, (list, tuple)):
                values[k] = [np.asarray(x.value) for x in v]
            else:
                values[k] = np.asarray(v.value)
    value = problem.problem.value if status == OPTIMAL else None
    return ConicResult(status=status, value=None if value is None else float(np.real(value)), values=values,
                       solver=used, solve_time=elapsed, raw_status=str(raw),
                       inaccurate=str(raw).endswith("inaccurate"))


def dump_cbf(problem: ConicProblem, path: str | Path) -> Path:
    """Write the canonicalized problem in CBF (version 3) format.

    The data come from cvxpy's SCS canonical form ``min c^T x + d`` subject to
    ``b - A x`` in a product of zero, nonnegative, second-order and scaled
    vectorized PSD cones; CBF expresses the same as ``-A x + b`` in K.
    """
    data, _, _ = problem.problem.get_problem_data(cp.SCS)
    A = data["A"].tocoo()
    b = np.asarray(data["b"], dtype=float)
    c = np.asarray(data["c"], dtype=float)
    dims = data["dims"]
    m, n = A.shape
    blocks = []
    if dims.zero:
        blocks.append(("L=", dims.zero))
    if dims.nonneg:
        blocks.append(("L+", dims.nonneg))
    for q in dims.soc:
        blocks.append(("Q", q))
    for s in dims.psd:
        blocks.append(("SVECPSD", s * (s + 1) // 2))
    if dims.exp or dims.p3d:
        raise ValueError("exponential and power cones are not supported by the CBF dump")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["VER", "3", "", "OBJSENSE", "MIN", "", "VAR", f"{n} 1", f"F {n}", ""]
    lines += ["CON", f"{m} {len(blocks)}"] + [f"{k} {d}" for k, d in blocks] + [""]
    nz_c = np.flatnonzero(c)
    lines += ["OBJACOORD", str(nz_c.size)] + [f"{j} {float(c[j])!r}" for j in nz_c] + [""]
    mask = A.data != 0
    lines += ["ACOORD", str(int(mask.sum()))]
    lines += [f"{i} {j} {-float(v)!r}" for i, j, v in zip(A.row[mask], A.col[mask], A.data[mask])]
    nz_b = np.flatnonzero(b)
    lines += ["", "BCOORD", str(nz_b.size)] + [f"{i} {float(b[i])!r}" for i in nz_b] + [""]
    path.write_text("\n".join(lines))
    return path


def hermitian_expr(E):
    """Explicitly Hermitian part of a cvxpy expression."""
    return (E + E.H) / 2
