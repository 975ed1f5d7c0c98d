"""SDP waveform designs for fixed polarizations.

Both problems work in normalized units ``R_x = rho_t R_n`` with
``Tr(R_n) = 1``. The MSE problem is written through a congruence of the
Schur-complement LMI that keeps its data well scaled; the SINR problem uses
the Charnes-Cooper substitution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .conic import (
    INFEASIBLE,
    NUMERICAL_ERROR,
    OPTIMAL,
    ConicProblem,
    SolverSettings,
    hermitian_expr,
    solve_conic,
)
from .errors import DegenerateTransformError, DegenerateUserError, RecoveryError, ShapeError
from .metrics import _partial_trace_rx, default_kappa, mse_from_covariance, psd_sqrt, target_sinr, user_sinrs
from .polar import as_matrix, hermitian
from .scene import Scene


@dataclass
class WaveformSolution:
    status: str
    R_x: np.ndarray | None = field(default=None, repr=False)
    R_k: list = field(default_factory=list, repr=False)
    J: np.ndarray | None = field(default=None, repr=False)
    t: float | None = None
    objective: float | None = None
    F: np.ndarray | None = field(default=None, repr=False)
    K: int = 0
    solve_time: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def sensing_power(self) -> float:
        if self.R_x is None:
            return float("nan")
        return float(np.real(np.trace(self.R_x) - sum(np.trace(R) for R in self.R_k)))


def _check_channels(H: np.ndarray, n: int) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    if H.ndim == 1:
        H = H.reshape(-1, 1)
    if H.size == 0:
        return np.zeros((n, 0), dtype=complex)
    if H.shape[0] != n:
        raise ShapeError(f"channels have {H.shape[0]} entries but the array has {n} ports")
    return H


# Relative margin on the user SINR targets so that solver round-off never
# leaves a recovered precoder just below the threshold.
SINR_MARGIN = 1e-5

# Indefiniteness allowed in the recovery residual, relative to ||R_x||, for
# solutions the solver certified at full accuracy and for inaccurate ones.
RECOVERY_TOL = 1e-7
RECOVERY_TOL_INACCURATE = 1e-5


def _covariance_block(n: int, K: int, H: np.ndarray, gamma_th: float, sigma_c2_scaled, scale=None):
    """Variables and constraints shared by both problems.

    ``scale`` is ``None`` for a fixed trace of one or a cvxpy variable ``t``
    for the Charnes-Cooper form.
    """
    R = cp.Variable((n, n), hermitian=True, name="R")
    Rk = [cp.Variable((n, n), hermitian=True, name=f"R{k + 1}") for k in range(K)]
    cons, labels = [], []
    g = gamma_th * (1.0 + SINR_MARGIN)
    c = 1.0 + 1.0 / g if g > 0 else np.inf
    s = 1.0 if scale is None else scale
    for k in range(K):
        h = H[:, k]
        hh = np.outer(h, h.conj())
        if np.isinf(c):
            cons.append(cp.real(cp.trace(hh @ Rk[k])) >= 0)
        else:
            cons.append(cp.real(cp.trace(hh @ (R - c * Rk[k]))) + sigma_c2_scaled * s <= 0)
        labels.append(f"user:{k}")
    for k in range(K):
        cons.append(Rk[k] >> 0)
        labels.append(f"psd:R{k + 1}")
    cons.append(hermitian_expr(R - sum(Rk)) >> 0 if K else R >> 0)
    labels.append("psd:residual")
    cons.append(cp.real(cp.trace(R)) == s)
    labels.append("trace")
    return R, Rk, cons, labels


@dataclass
class MseContext:
    scene: Scene
    P_t: np.ndarray
    P_r: np.ndarray
    H: np.ndarray
    gamma_th: float
    rho_t: float
    sigma_c2: float
    kappa: float
    Ob: np.ndarray
    W: np.ndarray
    B: np.ndarray
    s: float
    sigma2n: float


def build_mse_sdp(scene: Scene, P_t, P_r, H, gamma_th: float, rho_t: float, sigma_c2: float,
                  kappa: float | None = None) -> ConicProblem:
    """Relaxed MSE-minimizing covariance design.

    Constraints: one Schur LMI, K user SINR LMIs, K+1 PSD blocks and the
    power equality.
    """
    Pt, Pr = as_matrix(P_t), as_matrix(P_r)
    n, nr = Pt.shape[1], Pr.shape[1]
    H = _check_channels(H, n)
    K = H.shape[1]
    Pbar = np.kron(Pt, Pr)
    Ob = hermitian(Pbar.T @ scene.Omega @ Pbar)
    if kappa is None:
        kappa = default_kappa(Ob, scene)
    Ob = Ob + kappa * np.eye(Ob.shape[0])
    w, U = np.linalg.eigh(Ob)
    if w[0] <= 0:
        raise ShapeError("port covariance is not positive definite after loading")
    s = float(w[-1])
    # work in the eigenbasis of the port covariance and drop the directions that
    # only carry the loading: the target never excites them, so their LMI rows
    # decouple from J and removing them shrinks the cone without changing the optimum
    keep = w - kappa > 1e-10 * s
    B = U[:, keep] * np.sqrt(w[keep] / s)
    A = scene.beta0 * Pbar.T @ scene.A0 @ scene.Sigma0
    W = (U[:, keep].conj().T @ A) / np.sqrt(w[keep])[:, None]
    sigma2n = scene.sigma_s2 / (rho_t * s)

    R, Rk, cons, labels = _covariance_block(n, K, H, gamma_th, sigma_c2 / rho_t)
    J = cp.Variable((4, 4), hermitian=True, name="J")
    Q = B.conj().T @ cp.kron(cp.conj(R), np.eye(nr)) @ B + sigma2n * np.eye(B.shape[1])
    off = np.sqrt(sigma2n) * W
    lmi = cp.bmat([[J, off.conj().T], [off, Q]])
    cons.insert(0, hermitian_expr(lmi) >> 0)
    labels.insert(0, "schur")
    prob = cp.Problem(cp.Minimize(cp.real(cp.trace(J))), cons)
    ctx = MseContext(scene, Pt, Pr, H, gamma_th, rho_t, sigma_c2, kappa, Ob, W, B, s, sigma2n)
    return ConicProblem(prob, {"R": R, "Rk": Rk, "J": J}, labels, {"mse": ctx})


def schur_residual(ctx: MseContext, R_n: np.ndarray, J_n: np.ndarray) -> float:
    """Smallest eigenvalue of ``J - J_min(R)`` in normalized units."""
    nr = ctx.P_r.shape[1]
    Q = ctx.B.conj().T @ np.kron(R_n.conj(), np.eye(nr)) @ ctx.B + ctx.sigma2n * np.eye(ctx.B.shape[1])
    Jmin = ctx.sigma2n * ctx.W.conj().T @ np.linalg.solve(Q, ctx.W)
    return float(np.linalg.eigvalsh(hermitian(J_n - Jmin))[0])


def schur_residual_original(ctx: MseContext, R_x: np.ndarray, J: np.ndarray) -> float:
    """The same check written with the unscaled inverse port covariance."""
    nr = ctx.P_r.shape[1]
    scene = ctx.scene
    Oinv = np.linalg.inv(ctx.Ob)
    Pbar = np.kron(ctx.P_t, ctx.P_r)
    A = scene.beta0 * Pbar.T @ scene.A0 @ scene.Sigma0
    core = np.kron(R_x.conj(), np.eye(nr)) + scene.sigma_s2 * Oinv
    Jmin = A.conj().T @ Oinv @ np.linalg.solve(core, Oinv @ A)
    return float(np.linalg.eigvalsh(hermitian(J - Jmin))[0])


def _recovery_tol(res) -> float:
    return RECOVERY_TOL_INACCURATE if res.inaccurate else RECOVERY_TOL


def solve_mse_waveform(problem: ConicProblem, settings: SolverSettings | None = None,
                       recover: bool = True, dump_path=None) -> WaveformSolution:
    ctx: MseContext = problem.context["mse"]
    res = solve_conic(problem, settings, dump_path=dump_path)
    K = ctx.H.shape[1]
    if res.status != OPTIMAL:
        status = res.status
        if status == NUMERICAL_ERROR and not users_feasible(ctx.H, ctx.gamma_th, ctx.rho_t, ctx.sigma_c2, settings):
            status = INFEASIBLE
        return WaveformSolution(status=status, K=K, solve_time=res.solve_time,
                                diagnostics={"raw_status": res.raw_status})
    R_n = hermitian(res.values["R"])
    R_x = ctx.rho_t * R_n
    R_k = [ctx.rho_t * hermitian(R) for R in res.values["Rk"]]
    J_n = hermitian(res.values["J"])
    const = float(np.real(np.trace(ctx.scene.Sigma0))) - float(np.linalg.norm(ctx.W) ** 2)
    diag = {
        "schur_residual": schur_residual(ctx, R_n, J_n),
        "sdp_mse": const + float(np.real(np.trace(J_n))),
        "kappa": ctx.kappa,
        "raw_status": res.raw_status,
        "solver": res.solver,
    }
    J = J_n / ctx.scene.sigma_s2 if ctx.scene.sigma_s2 > 0 else J_n
    sol = WaveformSolution(status=OPTIMAL, R_x=R_x, R_k=R_k, J=J, objective=diag["sdp_mse"], K=K,
                           solve_time=res.solve_time, diagnostics=diag)
    if recover:
        sol.F = recover_precoders(R_x, R_k, ctx.H, tol=_recovery_tol(res))
        diag["mse"] = mse_from_covariance(sol.F @ sol.F.conj().T, ctx.P_t, ctx.P_r, ctx.scene)
    return sol


def users_feasible(H: np.ndarray, gamma_th: float, rho_t: float, sigma_c2: float,
                   settings: SolverSettings | None = None) -> bool:
    """Whether the user SINR targets admit any covariance under the power budget."""
    n, K = H.shape
    if K == 0:
        return True
    R, Rk, cons, labels = _covariance_block(n, K, H, gamma_th, sigma_c2 / rho_t)
    prob = ConicProblem(cp.Problem(cp.Minimize(0), cons), {"R": R}, labels)
    return solve_conic(prob, settings).status != INFEASIBLE


def recover_precoders(R_x: np.ndarray, R_k, H: np.ndarray, prune: float = 1e-8, tol: float = RECOVERY_TOL) -> np.ndarray:
    """Rank-one user precoders plus an eigen-factor of the residual covariance.

    Returns ``F = [f_1 .. f_K, F_s]``; sensing columns with power below
    ``prune * Tr(R_x)`` are dropped.
    """
    R_x = hermitian(np.asarray(R_x))
    n = R_x.shape[0]
    H = _check_channels(H, n)
    cols = []
    for k, Rk in enumerate(R_k):
        h = H[:, k]
        Rk = hermitian(np.asarray(Rk))
        g = float(np.real(h.conj() @ Rk @ h))
        if g <= 1e-14 * max(float(np.real(np.trace(Rk))), 1e-300) * max(np.linalg.norm(h) ** 2, 1e-300) or g <= 0:
            raise DegenerateUserError(f"user {k} has no useful power")
        cols.append(Rk @ h / np.sqrt(g))
    Fc = np.column_stack(cols) if cols else np.zeros((n, 0), dtype=complex)
    resid = hermitian(R_x - Fc @ Fc.conj().T)
    w, U = np.linalg.eigh(resid)
    scale = max(float(np.linalg.norm(R_x, 2)), 1e-300)
    if w[0] < -tol * scale:
        raise RecoveryError(f"residual covariance is indefinite (min eigenvalue {w[0]:.3e})")
    power = float(np.real(np.trace(R_x)))
    keep = w > prune * power
    Fs = U[:, keep] * np.sqrt(w[keep])
    return np.hstack([Fc, Fs[:, ::-1]])


def covariance_sinrs(R_x: np.ndarray, R_k, H: np.ndarray, sigma_c2: float) -> np.ndarray:
    out = []
    for k, Rk in enumerate(R_k):
        h = H[:, k]
        u = float(np.real(h.conj() @ Rk @ h))
        i = float(np.real(h.conj() @ (R_x - Rk) @ h))
        out.append(u / (i + sigma_c2))
    return np.array(out)


@dataclass
class SinrContext:
    scene: Scene
    P_t: np.ndarray
    P_r: np.ndarray
    H: np.ndarray
    gamma_th: float
    rho_t: float
    sigma_c2: float
    c0: float


def build_sinr_sdp(scene: Scene, P_t, P_r, H, gamma_th: float, rho_t: float, sigma_c2: float) -> ConicProblem:
    """Charnes-Cooper form of the target-SINR maximization.

    With ``R_x = rho_t R_n`` and ``Rt = t R_n`` the denominator is pinned to
    a constant ``c0`` chosen so that ``t`` is of order one.
    """
    Pt, Pr = as_matrix(P_t), as_matrix(P_r)
    n, nr = Pt.shape[1], Pr.shape[1]
    H = _check_channels(H, n)
    K = H.shape[1]
    Pbar = np.kron(Pt, Pr)
    W0 = _partial_trace_rx(hermitian(Pbar.T @ scene.Omega0 @ Pbar), n, nr)
    Wc = _partial_trace_rx(hermitian(Pbar.T @ scene.OmegaC @ Pbar), n, nr)
    s_n = scene.sigma_s2 / rho_t
    c0 = s_n + float(np.real(np.trace(Wc))) / n
    if c0 <= 0:
        c0 = 1.0
    t = cp.Variable(nonneg=True, name="t")
    R, Rk, cons, labels = _covariance_block(n, K, H, gamma_th, sigma_c2 / rho_t, scale=t)
    cons.append(cp.real(cp.trace(Wc.T @ R)) + s_n * t == c0)
    labels.append("normalization")
    obj = cp.Maximize(cp.real(cp.trace(W0.T @ R)) / c0)
    prob = cp.Problem(obj, cons)
    ctx = SinrContext(scene, Pt, Pr, H, gamma_th, rho_t, sigma_c2, c0)
    return ConicProblem(prob, {"R": R, "Rk": Rk, "t": t}, labels, {"sinr": ctx})


def solve_sinr_waveform(scene: Scene, P_t, P_r, H, gamma_th: float, rho_t: float, sigma_c2: float,
                        settings: SolverSettings | None = None, recover: bool = True,
                        dump_path=None, t_tol: float = 1e-9) -> WaveformSolution:
    problem = build_sinr_sdp(scene, P_t, P_r, H, gamma_th, rho_t, sigma_c2)
    ctx: SinrContext = problem.context["sinr"]
    res = solve_conic(problem, settings, dump_path=dump_path)
    K = ctx.H.shape[1]
    if res.status != OPTIMAL:
        return WaveformSolution(status=res.status, K=K, solve_time=res.solve_time,
                                diagnostics={"raw_status": res.raw_status})
    t = float(res.values["t"])
    if t <= t_tol:
        raise DegenerateTransformError(f"Charnes-Cooper scale collapsed (t={t:.3e})")
    R_x = ctx.rho_t * hermitian(res.values["R"]) / t
    R_k = [ctx.rho_t * hermitian(R) / t for R in res.values["Rk"]]
    sinr = target_sinr(ctx.P_t, ctx.P_r, scene, R_x=R_x)
    diag = {"sdp_objective": res.value, "target_sinr": sinr, "t": t, "raw_status": res.raw_status,
            "solver": res.solver, "c0": ctx.c0}
    sol = WaveformSolution(status=OPTIMAL, R_x=R_x, R_k=R_k, t=t, objective=res.value, K=K,
                           solve_time=res.solve_time, diagnostics=diag)
    if recover:
        sol.F = recover_precoders(R_x, R_k, ctx.H, tol=_recovery_tol(res))
    return sol


def mse_waveform(scene: Scene, P_t, P_r, H, gamma_th: float, rho_t: float, sigma_c2: float,
                 settings: SolverSettings | None = None, kappa: float | None = None,
                 dump_path=None) -> WaveformSolution:
    """Build and solve the MSE design in one call."""
    prob = build_mse_sdp(scene, P_t, P_r, H, gamma_th, rho_t, sigma_c2, kappa)
    return solve_mse_waveform(prob, settings, dump_path=dump_path)


def uniform_waveform(n: int, rho_t: float) -> np.ndarray:
    """Isotropic precoder ``sqrt(rho_t / n) I``."""
    return np.sqrt(rho_t / n) * np.eye(n, dtype=complex)


def audit_solution(sol: WaveformSolution, H: np.ndarray, gamma_th: float, sigma_c2: float, rho_t: float,
                   tol: float = 1e-7) -> dict:
    """Independent re-check of every constraint of a returned design."""
    out = {}
    R_x = sol.R_x
    scale = max(float(np.linalg.norm(R_x, 2)), 1e-300)
    out["trace"] = abs(float(np.real(np.trace(R_x))) - rho_t) <= tol * rho_t
    resid = R_x - sum(sol.R_k) if sol.R_k else R_x
    out["residual_psd"] = float(np.linalg.eigvalsh(hermitian(resid))[0]) >= -tol * scale
    out["users_psd"] = all(float(np.linalg.eigvalsh(hermitian(R))[0]) >= -tol * scale for R in sol.R_k)
    if sol.R_k:
        g = covariance_sinrs(R_x, sol.R_k, H, sigma_c2)
        out["user_sinr_cov"] = bool(np.all(g >= gamma_th * (1 - 1e-6) - 1e-9))
    if sol.F is not None and H.shape[1]:
        g = user_sinrs(H, sol.F, sigma_c2)
        out["user_sinr_precoder"] = bool(np.all(g >= gamma_th * (1 - 1e-6) - 1e-9))
    return out
