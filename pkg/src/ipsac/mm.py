"""Majorization-minimization polarization updates and the alternating loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .conic import OPTIMAL, SolverSettings
from .errors import ConditioningError, DomainError, IpsacError, StageError
from .metrics import mse_from_covariance, nmse_db, sum_rate, target_sinr, user_sinrs
from .polar import block_matrix, build_lift_operators, hermitian, normalize_blocks, static_pattern
from .scene import CommChannelSet, Scene

log = logging.getLogger(__name__)

_ZERO_DIR = 1e-12


@lru_cache(maxsize=32)
def lift_operators(n_t: int, n_r: int):
    return build_lift_operators(n_t, n_r)


def blocks_of(P: np.ndarray) -> np.ndarray:
    """Stacked 2-vectors of a block-diagonal polarization matrix."""
    P = np.asarray(P)
    n = P.shape[1]
    idx = np.arange(n)
    return np.column_stack([P[2 * idx, idx], P[2 * idx + 1, idx]]).reshape(-1)


# ---------------------------------------------------------------------------
# Surrogates


@dataclass
class MseMajorizerState:
    E: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    Lambda: np.ndarray = field(repr=False)
    lambda_Omega: float
    d: np.ndarray
    q: np.ndarray
    const: float
    objective: float

    def surrogate(self, P_t: np.ndarray, P_r: np.ndarray) -> float:
        return float(np.sum(np.kron(P_t, P_r) * self.Lambda)) + self.const


def mse_objective(F: np.ndarray, P_t, P_r, scene: Scene) -> float:
    """``-Tr(B^H E^{-1} B)``, i.e. the MSE minus ``Tr(Sigma0)``."""
    F = np.atleast_2d(F)
    return mse_from_covariance(F @ F.conj().T, P_t, P_r, scene) - float(np.real(np.trace(scene.Sigma0)))


def _mse_terms(F, P_t, P_r, scene):
    nr = P_r.shape[1]
    Xbar = np.kron(np.asarray(F).conj(), np.eye(nr))
    Pbar = np.kron(P_t, P_r)
    PX = Pbar @ Xbar
    E = hermitian(PX.conj().T @ scene.Omega @ PX) + scene.sigma_s2 * np.eye(PX.shape[1])
    A0S = scene.beta0 * scene.A0 @ scene.Sigma0
    B = PX.conj().T @ A0S
    return Xbar, PX, E, B, A0S


def mse_majorizer(F: np.ndarray, P_t: np.ndarray, P_r: np.ndarray, scene: Scene,
                  lambda_Omega: float | None = None) -> MseMajorizerState:
    """Linear majorizer of the MSE objective around ``Pbar_i = P_t (x) P_r``.

    The bound ``Tr(Pbar^T Lambda) + const`` holds for every ``Pbar`` with
    orthonormal columns and touches at the expansion point.
    """
    P_t, P_r = np.asarray(P_t, dtype=float), np.asarray(P_r, dtype=float)
    Xbar, PX, E, B, A0S = _mse_terms(F, P_t, P_r, scene)
    try:
        c = sla.cho_factor(E, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("majorizer normal matrix is singular") from exc
    Y = sla.cho_solve(c, B)
    lam = float(np.linalg.eigvalsh(scene.Omega)[-1]) if lambda_Omega is None else lambda_Omega
    Om = scene.Omega
    D = PX @ Y
    G = (Om @ D - lam * D - A0S) @ Y.conj().T @ Xbar.conj().T
    Lam = 2.0 * np.real(G)
    f_i = -float(np.real(np.trace(B.conj().T @ Y)))
    const = (2.0 * lam * float(np.linalg.norm(D) ** 2) - float(np.real(np.trace(D.conj().T @ Om @ D)))
             + scene.sigma_s2 * float(np.linalg.norm(Y) ** 2))
    lifts = lift_operators(P_t.shape[1], P_r.shape[1])
    d = lifts.tx_coefficients(Lam, P_r)
    q = lifts.rx_coefficients(Lam, P_t)
    return MseMajorizerState(E=E, B=B, Lambda=Lam, lambda_Omega=lam, d=d, q=q, const=const, objective=f_i)


@dataclass
class SinrSurrogateState:
    nu: float
    Xi: np.ndarray = field(repr=False)
    lambda_Xi: float
    Gamma: np.ndarray = field(repr=False)
    g: np.ndarray
    v: np.ndarray
    const: float
    objective: float

    def surrogate(self, P_t: np.ndarray, P_r: np.ndarray) -> float:
        return float(np.sum(np.kron(P_t, P_r) * self.Gamma)) + self.const


def sinr_xi(nu: float, scene: Scene) -> np.ndarray:
    n = scene.Omega.shape[0]
    return hermitian(nu * (scene.OmegaC + (scene.sigma_s2 / scene.n_r) * np.eye(n)) - scene.Omega0)


def sinr_trace_objective(F: np.ndarray, P_t, P_r, Xi: np.ndarray) -> float:
    """``Tr(Fbar^H Pbar^T Xi Pbar Fbar)``."""
    F = np.atleast_2d(F)
    nr = np.asarray(P_r).shape[1]
    Pbar = np.kron(P_t, P_r)
    Rbar = np.kron((F @ F.conj().T).conj(), np.eye(nr))
    return float(np.real(np.trace(Pbar.T @ Xi @ Pbar @ Rbar)))


def sinr_surrogate(nu: float, F: np.ndarray, P_t: np.ndarray, P_r: np.ndarray, scene: Scene) -> SinrSurrogateState:
    """Linear majorizer of the Dinkelbach objective at fixed ``nu``."""
    if nu < 0:
        raise DomainError("nu must be nonnegative")
    P_t, P_r = np.asarray(P_t, dtype=float), np.asarray(P_r, dtype=float)
    F = np.atleast_2d(F)
    nr = P_r.shape[1]
    Xi = sinr_xi(nu, scene)
    lam = float(np.linalg.eigvalsh(Xi)[-1])
    Pbar = np.kron(P_t, P_r)
    Rbar = np.kron((F @ F.conj().T).conj(), np.eye(nr))
    XiL = Xi - lam * np.eye(Xi.shape[0])
    Gamma = 2.0 * np.real(XiL @ Pbar @ Rbar)
    a_i = float(np.real(np.trace(Pbar.T @ XiL @ Pbar @ Rbar)))
    const = -a_i + lam * float(np.real(np.trace(Rbar)))
    lifts = lift_operators(P_t.shape[1], P_r.shape[1])
    g = lifts.tx_coefficients(Gamma, P_r)
    v = lifts.rx_coefficients(Gamma, P_t)
    return SinrSurrogateState(nu=nu, Xi=Xi, lambda_Xi=lam, Gamma=Gamma, g=g, v=v, const=const,
                              objective=float(np.real(np.trace(Pbar.T @ Xi @ Pbar @ Rbar))))


# ---------------------------------------------------------------------------
# User SINR constraints in the transmit polarization


@dataclass
class UserConstraintLinearization:
    Psi_bar: np.ndarray = field(repr=False)
    lambda_Psi: float
    u: np.ndarray
    r: float


def user_channel_tilde(H_up: np.ndarray, p_u: np.ndarray) -> np.ndarray:
    """``h~ = H_up^H p_u``, the user channel before transmit polarization."""
    return np.asarray(H_up).conj().T @ np.asarray(p_u, dtype=float)


def user_constraint_quadratic(H_up_list, p_u: np.ndarray, F: np.ndarray, gamma_th: float, n_t: int):
    """Real symmetric ``Psi_bar_k`` with ``p_t^T Psi_bar_k p_t + gamma sigma^2 <= 0`` iff user k meets its target.

    All columns of ``F`` other than ``f_k`` count as interference.
    """
    F = np.atleast_2d(F)
    p_u = np.asarray(p_u, dtype=float).reshape(-1, 2)
    lifts = lift_operators(n_t, 1)
    Theta = lifts.Theta_t
    out = []
    for k, H in enumerate(H_up_list):
        ht = user_channel_tilde(H, p_u[k])
        Hh = np.outer(ht, ht.conj())
        w = -np.ones(F.shape[1])
        w[np.arange(F.shape[1]) != k] = gamma_th
        C = (F.conj() * w) @ F.T
        Psi = np.kron(C, Hh)
        out.append(np.real(Theta.T @ (Theta.T @ Psi.T).T))
    return [hermitian(P).real for P in out]


def linearize_user_constraint(Psi_bar: np.ndarray, p_i: np.ndarray, gamma_th: float,
                              sigma_c2: float) -> UserConstraintLinearization:
    """Affine inner approximation ``p^T u + r <= 0`` around ``p_i``."""
    p_i = np.asarray(p_i, dtype=float)
    n_t = p_i.size // 2
    lam = float(np.linalg.eigvalsh(Psi_bar)[-1])
    M = Psi_bar - lam * np.eye(Psi_bar.shape[0])
    u = 2.0 * M @ p_i
    r = gamma_th * sigma_c2 + lam * n_t - float(p_i @ M @ p_i)
    return UserConstraintLinearization(Psi_bar=Psi_bar, lambda_Psi=lam, u=u, r=r)


# ---------------------------------------------------------------------------
# K-bisection dual search


@dataclass
class DualState:
    mu: np.ndarray
    g: np.ndarray
    p_t: np.ndarray
    dual_value: float
    feasible: bool
    sweeps: int
    converged: bool
    infeasible_user: int | None = None
    degenerate_blocks: tuple = ()

    @property
    def kkt_residual(self) -> float:
        if self.g.size == 0:
            return 0.0
        return float(max(np.max(self.g), np.max(np.abs(self.mu * self.g))))


def _closed_form(d2: np.ndarray, U2: np.ndarray, mu: np.ndarray, prev: np.ndarray | None) -> np.ndarray:
    """Blockwise minimizer ``-(d_n + sum mu_k u_kn) / ||.||``."""
    z = d2 + np.tensordot(mu, U2, axes=1) if U2.size else d2.copy()
    nrm = np.linalg.norm(z, axis=1)
    p = np.empty_like(z)
    ok = nrm >= _ZERO_DIR
    p[ok] = -z[ok] / nrm[ok, None]
    if np.any(~ok):
        fb = np.tile([1.0, 0.0], (z.shape[0], 1)) if prev is None else np.asarray(prev).reshape(-1, 2)
        p[~ok] = fb[~ok] / np.linalg.norm(fb[~ok], axis=1)[:, None]
    return p


def _circle_lp(c: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimize ``c^T p`` over the unit circle subject to ``a_k^T p <= b_k``.

    The optimum is the free minimizer or a point where some constraint is
    tight; if nothing is feasible the least-violating candidate is returned.
    """
    cands = []
    if np.linalg.norm(c) > 0:
        cands.append(-c / np.linalg.norm(c))
    for ak, bk in zip(a, b):
        na = np.linalg.norm(ak)
        if na == 0 or abs(bk) > na:
            continue
        base = ak * bk / na**2
        perp = np.array([-ak[1], ak[0]]) / na
        h = np.sqrt(max(1.0 - (bk / na) ** 2, 0.0))
        cands += [base + h * perp, base - h * perp]
    ang = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    cands += list(np.column_stack([np.cos(ang), np.sin(ang)]))
    P = np.array(cands)
    P /= np.linalg.norm(P, axis=1)[:, None]
    viol = np.max(P @ a.T - b, axis=1) if len(b) else np.zeros(len(P))
    scale = 1e-12 * max(1.0, float(np.max(np.abs(b))) if len(b) else 1.0)
    feas = viol <= scale
    if np.any(feas):
        idx = np.flatnonzero(feas)
        return P[idx[np.argmin(P[idx] @ c)]]
    return P[np.argmin(viol)]


def k_bisection(d: np.ndarray, u: np.ndarray, r: np.ndarray, eps1: float = 1e-5, eps2: float = 1e-6,
                eps3: float = 1e-6, mu0: np.ndarray | None = None, prev: np.ndarray | None = None,
                max_sweeps: int = 200, max_bisect: int = 200, mu_cap: float = 1e12) -> DualState:
    """Coordinate-ascent dual search for the unit-norm LP.

    ``d`` is the objective vector, ``u`` (K x 2N) and ``r`` (K) the affine
    constraints ``p^T u_k + r_k <= 0``. Each multiplier is bisected until its
    constraint value lies in ``[-eps3 * min(1, 1/mu_k), 0]``; sweeps repeat
    until the dual objective settles (relative ``eps1``) and the KKT
    residuals are below ``eps3``.

    When the dual maximizer sits where some block ``d_n + sum mu_k u_kn``
    vanishes, the closed form leaves that block undetermined and coordinate
    ascent stalls. Such blocks are then set to the best unit vector that keeps
    every constraint satisfied; complementary slackness may be unattainable
    there and the blocks are reported in ``degenerate_blocks``.
    """
    d = np.asarray(d, dtype=float)
    d2 = d.reshape(-1, 2)
    u = np.asarray(u, dtype=float).reshape(-1, d.size)
    U2 = u.reshape(u.shape[0], d.size // 2, 2)
    r = np.asarray(r, dtype=float).reshape(-1)
    K = u.shape[0]
    mu = np.zeros(K) if mu0 is None else np.maximum(np.asarray(mu0, dtype=float), 0.0)

    def primal(m):
        return _closed_form(d2, U2, m, prev)

    def gof(p):
        return np.einsum("knj,nj->k", U2, p) + r

    def gvec(m):
        return gof(primal(m))

    def dual(m):
        z = d2 + np.tensordot(m, U2, axes=1) if K else d2
        return -float(np.sum(np.linalg.norm(z, axis=1))) + float(m @ r)

    if K == 0:
        p = primal(mu)
        return DualState(mu, np.zeros(0), p.reshape(-1), dual(mu), True, 0, True)

    limits = r - np.linalg.norm(U2, axis=2).sum(axis=1)
    prev_val = -np.inf
    sweeps = 0
    converged = False
    for sweeps in range(1, max_sweeps + 1):
        mu_prev = mu.copy()
        for k in range(K):
            def gk(x):
                m = mu.copy()
                m[k] = x
                return gvec(m)[k]

            if gk(0.0) <= 0:
                mu[k] = 0.0
                continue
            if limits[k] >= -eps2:
                return DualState(mu, gvec(mu), primal(mu).reshape(-1), dual(mu), False, sweeps, False, k)
            lo, hi = 0.0, 1.0
            while gk(hi) > 0:
                lo, hi = hi, 2.0 * hi
                if hi > mu_cap:
                    return DualState(mu, gvec(mu), primal(mu).reshape(-1), dual(mu), False, sweeps, False, k)
            x = hi
            for _ in range(max_bisect):
                x = 0.5 * (lo + hi)
                gx = gk(x)
                if -eps3 * min(1.0, 1.0 / x) <= gx <= 0:
                    break
                if gx > 0:
                    lo = x
                else:
                    hi = x
                if hi - lo <= 1e-15 * hi:
                    x = hi
                    break
            else:
                x = hi
            if gk(x) > 0:
                x = hi
            mu[k] = x
        val = dual(mu)
        g = gvec(mu)
        kkt = np.all(g <= eps3) and np.all(np.abs(mu * g) <= eps3)
        rel = abs(val - prev_val) / max(abs(prev_val), 1e-300) if np.isfinite(prev_val) else np.inf
        prev_val = val
        if kkt and (rel < eps1 or K == 1):
            converged = True
            break
        if not kkt and np.max(np.abs(mu - mu_prev)) <= 1e-14 * (1.0 + np.max(mu)):
            break
    p = primal(mu)
    g = gof(p)
    degenerate = ()
    if not converged:
        z = d2 + np.tensordot(mu, U2, axes=1)
        nz = np.linalg.norm(z, axis=1)
        tol = 1e-6 * max(1.0, float(np.max(np.linalg.norm(d2, axis=1))))
        degenerate = tuple(int(n) for n in np.flatnonzero(nz <= tol))
        for n in degenerate:
            rest = g - U2[:, n, :] @ p[n]
            p[n] = _circle_lp(d2[n], U2[:, n, :], -rest)
            g = gof(p)
        converged = bool(np.all(g <= eps3) and np.all(np.abs(mu * g) <= eps3))
    return DualState(mu, g, p.reshape(-1), dual(mu), bool(np.all(g <= eps3)), sweeps, converged,
                     degenerate_blocks=degenerate)


def update_pr(q: np.ndarray, prev: np.ndarray | None = None) -> np.ndarray:
    """Blockwise minimizer of ``p_r^T q`` over unit-norm blocks.

    Blocks with a vanishing coefficient keep their previous value.
    """
    q2 = np.asarray(q, dtype=float).reshape(-1, 2)
    nrm = np.linalg.norm(q2, axis=1)
    out = np.empty_like(q2)
    ok = nrm >= _ZERO_DIR
    out[ok] = -q2[ok] / nrm[ok, None]
    if np.any(~ok):
        fb = np.tile([1.0, 0.0], (q2.shape[0], 1)) if prev is None else np.asarray(prev, dtype=float).reshape(-1, 2)
        out[~ok] = fb[~ok] / np.linalg.norm(fb[~ok], axis=1)[:, None]
    return out.reshape(-1)


def update_pu(H_up: np.ndarray, P_t: np.ndarray, F: np.ndarray, sigma_c2: float, k: int) -> np.ndarray:
    """Real unit-norm user polarization maximizing the SINR of user ``k``."""
    F = np.atleast_2d(F)
    C = np.asarray(H_up) @ np.asarray(P_t) @ F
    ck = C[:, k]
    others = np.delete(C, k, axis=1)
    Hhat = np.real(np.outer(ck, ck.conj()))
    Hbar = np.real(others @ others.conj().T) + sigma_c2 * np.eye(2)
    w, V = sla.eigh(Hhat, Hbar)
    p = V[:, -1]
    p = p / np.linalg.norm(p)
    j = int(np.argmax(np.abs(p)))
    return p if p[j] >= 0 else -p


def update_nu(F: np.ndarray, P_t, P_r, scene: Scene) -> float:
    return target_sinr(P_t, P_r, scene, F=np.atleast_2d(F))


# ---------------------------------------------------------------------------
# Polarization optimization


@dataclass
class PolarizationState:
    """Transmit/receive polarization matrices and user polarizations.

    ``reconfigurable=False`` marks dual-polarized arrays whose polarization
    matrices are identities and never updated.
    """

    P_t: np.ndarray
    P_r: np.ndarray
    p_u: np.ndarray
    reconfigurable: bool = True

    @property
    def p_t(self) -> np.ndarray:
        return blocks_of(self.P_t)

    @property
    def p_r(self) -> np.ndarray:
        return blocks_of(self.P_r)

    @classmethod
    def static(cls, n_t: int, n_r: int, K: int, mode: str = "alternating") -> "PolarizationState":
        Pt = static_pattern(n_t, mode).P
        Pr = static_pattern(n_r, mode).P
        pu = static_pattern(max(K, 1), mode).stacked.reshape(-1, 2)[:K]
        return cls(Pt, Pr, pu.copy())

    @classmethod
    def dual_polarized(cls, n_t: int, n_r: int, p_u: np.ndarray) -> "PolarizationState":
        return cls(np.eye(2 * n_t), np.eye(2 * n_r), np.asarray(p_u, dtype=float).reshape(-1, 2), False)


@dataclass(frozen=True)
class UpdateFlags:
    tx: bool = True
    rx: bool = True
    user: bool = True

    @property
    def any(self) -> bool:
        return self.tx or self.rx or self.user


@dataclass
class Problem:
    """Everything fixed during one optimization run."""

    objective: str
    scene: Scene
    channels: CommChannelSet
    gamma_th: float
    rho_t: float
    sigma_c2: float
    L: int = 16

    def __post_init__(self):
        if self.objective not in ("mse", "sinr"):
            raise DomainError(f"unknown objective {self.objective!r}")

    def H(self, state: PolarizationState) -> np.ndarray:
        return self.channels.with_pu(state.p_u).channels(state.P_t) if self.channels.K else np.zeros(
            (state.P_t.shape[1], 0), dtype=complex)

    def true_objective(self, F, state: PolarizationState) -> float:
        """MSE for the estimation task, negative target SINR for detection."""
        if self.objective == "mse":
            return mse_from_covariance(F @ F.conj().T, state.P_t, state.P_r, self.scene)
        return -target_sinr(state.P_t, state.P_r, self.scene, F=F)

    def user_sinrs(self, F, state: PolarizationState) -> np.ndarray:
        return user_sinrs(self.H(state), F, self.sigma_c2)

    def users_ok(self, F, state: PolarizationState, tol: float = 1e-9) -> bool:
        g = self.user_sinrs(F, state)
        return bool(np.all(g >= self.gamma_th * (1 - tol)))


@dataclass
class PolarizationResult:
    state: PolarizationState
    trace: list
    iterations: int
    infeasible: bool
    nu: list
    duals: list = field(default_factory=list)


def optimize_polarization(problem: Problem, F: np.ndarray, init: PolarizationState,
                          flags: UpdateFlags = UpdateFlags(), eps: tuple = (1e-5, 1e-6, 1e-6, 1e-5),
                          i_max: int = 50, safeguard: bool = True) -> PolarizationResult:
    """Block MM over ``p_t`` (K-bisection), ``p_r`` and ``p_u`` with ``F`` fixed."""
    eps1, eps2, eps3, eps4 = eps
    F = np.atleast_2d(F)
    state = replace(init, P_t=init.P_t.copy(), P_r=init.P_r.copy(), p_u=init.p_u.copy())
    sc = problem.scene
    K = problem.channels.K
    H_list = problem.channels.H_up
    obj = problem.true_objective(F, state)
    trace = [{"iteration": 0, "stage": "init", "objective": obj, "feasible": problem.users_ok(F, state)}]
    nus = []
    duals = []
    infeasible = False
    if i_max <= 0 or not (flags.any and (state.reconfigurable or flags.user)):
        return PolarizationResult(state, trace, 0, False, nus, duals)
    nu = update_nu(F, state.P_t, state.P_r, sc) if problem.objective == "sinr" else 0.0
    if problem.objective == "sinr":
        nus.append(nu)
    lam_omega = float(np.linalg.eigvalsh(sc.Omega)[-1])
    it = 0

    def accept(cand: PolarizationState, stage: str) -> bool:
        nonlocal state, obj
        new = problem.true_objective(F, cand)
        feas_new = problem.users_ok(F, cand)
        worse = new > obj + 1e-12 * max(abs(obj), 1.0)
        if safeguard and (worse or (not feas_new and problem.users_ok(F, state))):
            trace.append({"iteration": it, "stage": stage + ":rejected", "objective": obj,
                          "feasible": problem.users_ok(F, state)})
            return False
        state, obj = cand, new
        trace.append({"iteration": it, "stage": stage, "objective": obj, "feasible": feas_new})
        return True

    for it in range(1, i_max + 1):
        prev_obj = obj
        if state.reconfigurable and flags.tx:
            p_t = state.p_t
            if problem.objective == "mse":
                lin = mse_majorizer(F, state.P_t, state.P_r, sc, lam_omega).d
            else:
                lin = sinr_surrogate(nu, F, state.P_t, state.P_r, sc).g
            if K:
                Psis = user_constraint_quadratic(H_list, state.p_u, F, problem.gamma_th, sc.n_t)
                lins = [linearize_user_constraint(P, p_t, problem.gamma_th, problem.sigma_c2) for P in Psis]
                U = np.array([x.u for x in lins])
                r = np.array([x.r for x in lins])
            else:
                U, r = np.zeros((0, p_t.size)), np.zeros(0)
            dual = k_bisection(lin, U, r, eps1, eps2, eps3, prev=p_t)
            duals.append(dual)
            if not dual.feasible:
                infeasible = True
                trace.append({"iteration": it, "stage": "tx:infeasible", "objective": obj, "feasible": False})
            else:
                accept(replace(state, P_t=block_matrix(dual.p_t)), "tx")
        if state.reconfigurable and flags.rx:
            if problem.objective == "mse":
                coef = mse_majorizer(F, state.P_t, state.P_r, sc, lam_omega).q
            else:
                coef = sinr_surrogate(nu, F, state.P_t, state.P_r, sc).v
            accept(replace(state, P_r=block_matrix(update_pr(coef, state.p_r))), "rx")
        if flags.user and K:
            pu = state.p_u.copy()
            for k in range(K):
                pu[k] = update_pu(H_list[k], state.P_t, F, problem.sigma_c2, k)
            cand = replace(state, p_u=pu)
            if np.all(problem.user_sinrs(F, cand) >= problem.user_sinrs(F, state) * (1 - 1e-12)):
                state = cand
                trace.append({"iteration": it, "stage": "user", "objective": obj,
                              "feasible": problem.users_ok(F, state)})
        if problem.objective == "sinr":
            nu = update_nu(F, state.P_t, state.P_r, sc)
            nus.append(nu)
        if abs(obj - prev_obj) <= eps4 * max(abs(prev_obj), 1e-300):
            break
    return PolarizationResult(state, trace, it, infeasible, nus, duals)


# ---------------------------------------------------------------------------
# Alternating waveform / polarization design


@dataclass
class SolveReport:
    objective: str
    status: str
    trace: list
    state: PolarizationState | None = None
    F: np.ndarray | None = field(default=None, repr=False)
    mse: float = float("nan")
    nmse_db: float = float("nan")
    target_sinr: float = float("nan")
    user_sinrs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    outer_iters: int = 0
    wall_s: float = 0.0
    timings: dict = field(default_factory=dict)
    infeasible: bool = False

    @property
    def feasible(self) -> bool:
        return self.status == OPTIMAL and not self.infeasible

    @property
    def target_sinr_db(self) -> float:
        return 10 * np.log10(self.target_sinr) if self.target_sinr > 0 else -np.inf

    @property
    def sum_rate(self) -> float:
        return sum_rate(self.user_sinrs)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["outer", "iteration", "stage", "objective", "feasible"])
            for row in self.trace:
                w.writerow([row.get("outer", 0), row.get("iteration", 0), row["stage"],
                            repr(float(row["objective"])), int(bool(row.get("feasible", True)))])


def solve_waveform(problem: Problem, state: PolarizationState, settings: SolverSettings | None = None,
                   dump_path=None):
    from .waveform import mse_waveform, solve_sinr_waveform

    H = problem.H(state)
    if problem.objective == "mse":
        return mse_waveform(problem.scene, state.P_t, state.P_r, H, problem.gamma_th, problem.rho_t,
                            problem.sigma_c2, settings, dump_path=dump_path)
    return solve_sinr_waveform(problem.scene, state.P_t, state.P_r, H, problem.gamma_th, problem.rho_t,
                               problem.sigma_c2, settings, dump_path=dump_path)


def alternate_full(problem: Problem, init: PolarizationState, flags: UpdateFlags = UpdateFlags(),
                   outer_iters: int = 20, tol: float = 1e-4, settings: SolverSettings | None = None,
                   eps: tuple = (1e-5, 1e-6, 1e-6, 1e-5), i_max: int = 50,
                   on_stage: Callable | None = None, dump_path=None) -> SolveReport:
    """Alternate waveform design and polarization MM until the objective settles."""
    t0 = time.perf_counter()
    state = init
    trace = []
    timings = {"waveform": 0.0, "polarization": 0.0}
    best = None
    prev = None
    status = OPTIMAL
    infeasible = False
    n_outer = 0
    for outer in range(1, outer_iters + 1):
        n_outer = outer
        ts = time.perf_counter()
        try:
            sol = solve_waveform(problem, state, settings, dump_path=dump_path if outer == 1 else None)
        except IpsacError as exc:
            raise StageError("waveform", str(exc)) from exc
        timings["waveform"] += time.perf_counter() - ts
        if sol.status != OPTIMAL:
            status = sol.status if best is None else OPTIMAL
            infeasible = sol.status != OPTIMAL
            trace.append({"outer": outer, "iteration": 0, "stage": f"waveform:{sol.status}",
                          "objective": float("nan"), "feasible": False})
            break
        F = sol.F
        val = problem.true_objective(F, state)
        trace.append({"outer": outer, "iteration": 0, "stage": "waveform", "objective": val,
                      "feasible": problem.users_ok(F, state, 1e-6)})
        if best is None or val <= best[0] + 1e-9 * max(abs(best[0]), 1.0):
            best = (val, F, state)
        if on_stage:
            on_stage("waveform", outer, val)
        if not (flags.any and (state.reconfigurable or flags.user)):
            break
        ts = time.perf_counter()
        try:
            res = optimize_polarization(problem, F, state, flags, eps, i_max)
        except IpsacError as exc:
            raise StageError("polarization", str(exc)) from exc
        timings["polarization"] += time.perf_counter() - ts
        for row in res.trace[1:]:
            trace.append(dict(row, outer=outer))
        state = res.state
        val = problem.true_objective(F, state)
        if val <= best[0] + 1e-9 * max(abs(best[0]), 1.0):
            best = (val, F, state)
        if on_stage:
            on_stage("polarization", outer, val)
        if prev is not None and abs(val - prev) <= tol * max(abs(prev), 1e-300):
            break
        prev = val
    report = SolveReport(problem.objective, status, trace, outer_iters=n_outer, timings=timings, infeasible=infeasible)
    if best is not None:
        _, F, st = best
        report.status = OPTIMAL
        report.state, report.F = st, F
        report.mse = mse_from_covariance(F @ F.conj().T, st.P_t, st.P_r, problem.scene)
        report.nmse_db = nmse_db(report.mse, problem.scene.Sigma0)
        report.target_sinr = target_sinr(st.P_t, st.P_r, problem.scene, F=F)
        report.user_sinrs = problem.user_sinrs(F, st)
    report.wall_s = time.perf_counter() - t0
    return report
