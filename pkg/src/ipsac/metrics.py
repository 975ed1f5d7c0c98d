"""Measurement operator, LMMSE estimation, target SINR and user SINR."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConditioningError, DomainError, ShapeError
from .polar import as_matrix, hermitian
from .scene import Scene

_DENSE_LIMIT = 10 ** 6


def psd_sqrt(A: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root (negative eigenvalues clipped)."""
    w, U = np.linalg.eigh(hermitian(A))
    return hermitian((U * np.sqrt(np.clip(w, 0, None))) @ U.conj().T)


@dataclass(frozen=True)
class Waveform:
    """Precoder ``F`` (user columns first) with power budget and block length."""

    F: np.ndarray
    L: int
    rho_t: float
    K: int = 0
    check: bool = True

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=complex))
        object.__setattr__(self, "F", F)
        if self.L < 1:
            raise DomainError("codeword length must be positive")
        if self.check and self.rho_t > 0:
            p = float(np.real(np.trace(self.R_x)))
            if abs(p - self.rho_t) > 1e-8 * self.rho_t:
                raise DomainError(f"precoder power {p} differs from budget {self.rho_t}")

    @property
    def R_x(self) -> np.ndarray:
        return hermitian(self.F @ self.F.conj().T)

    @property
    def n_ports(self) -> int:
        return self.F.shape[0]


def codeword_from_covariance(R_x: np.ndarray, L: int) -> np.ndarray:
    """A transmit block ``X`` (``n x L``) with ``X X^H = R_x`` exactly.

    Requires ``L >= rank(R_x)``.
    """
    R_x = hermitian(np.asarray(R_x, dtype=complex))
    n = R_x.shape[0]
    w, U = np.linalg.eigh(R_x)
    order = np.argsort(w)[::-1]
    w, U = np.clip(w[order], 0, None), U[:, order]
    r = int(np.sum(w > 1e-12 * max(w[0], 1e-300))) if n else 0
    if r > L:
        raise ShapeError(f"covariance rank {r} exceeds codeword length {L}")
    X = np.zeros((n, L), dtype=complex)
    m = min(n, L)
    X[:, :m] = U[:, :m] * np.sqrt(w[:m])
    return X


@dataclass(frozen=True)
class MeasurementOperator:
    """``M = X^T P_t^T (x) P_r^T`` kept in factored form."""

    X: np.ndarray
    P_t: np.ndarray
    P_r: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=complex))
        Pt, Pr = as_matrix(self.P_t), as_matrix(self.P_r)
        if X.shape[0] != Pt.shape[1]:
            raise ShapeError(f"X has {X.shape[0]} rows but P_t has {Pt.shape[1]} ports")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "P_t", Pt)
        object.__setattr__(self, "P_r", Pr)

    @property
    def shape(self):
        L = self.X.shape[1]
        return (L * self.P_r.shape[1], self.P_t.shape[0] * self.P_r.shape[0])

    @property
    def Pbar(self) -> np.ndarray:
        return np.kron(self.P_t, self.P_r)

    @property
    def Xbar(self) -> np.ndarray:
        return np.kron(self.X.conj(), np.eye(self.P_r.shape[1]))

    def dense(self) -> np.ndarray:
        rows, cols = self.shape
        if rows * cols > _DENSE_LIMIT:
            raise ShapeError("measurement matrix too large to materialize")
        return np.kron(self.X.T @ self.P_t.T, self.P_r.T)

    def dense_lifted(self) -> np.ndarray:
        """The same operator assembled as ``Xbar^H Pbar^T``."""
        return self.Xbar.conj().T @ self.Pbar.T

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``M v`` without forming ``M``."""
        nt2, nr2 = self.P_t.shape[0], self.P_r.shape[0]
        Phi = np.asarray(v).reshape((nr2, nt2), order="F")
        return (self.P_r.T @ Phi @ self.P_t @ self.X).reshape(-1, order="F")


def measurement_matrix(X, P_t, P_r) -> MeasurementOperator:
    return MeasurementOperator(X, P_t, P_r)


@dataclass(frozen=True)
class EstimationResult:
    G_opt: np.ndarray = field(repr=False)
    Z_e: np.ndarray = field(repr=False)
    mse: float
    nmse_db: float


def nmse_db(mse: float, Sigma0: np.ndarray) -> float:
    if mse < 0:
        raise DomainError("MSE must be nonnegative")
    ratio = mse / float(np.real(np.trace(Sigma0)))
    return 10.0 * np.log10(ratio) if ratio > 0 else -np.inf


def lmmse_combiner(M, scene: Scene, kappa: float = 0.0) -> EstimationResult:
    """LMMSE combiner and error covariance for measurement operator ``M``.

    ``kappa`` adds ``kappa I`` to the total response covariance inside the
    normal matrix, which equals regularizing the port-domain covariance.
    """
    Md = M.dense() if isinstance(M, MeasurementOperator) else np.asarray(M)
    Sigma0, b0 = scene.Sigma0, scene.beta0
    Om = scene.Omega + kappa * np.eye(scene.Omega.shape[0]) if kappa else scene.Omega
    N = hermitian(Md @ Om @ Md.conj().T) + scene.sigma_s2 * np.eye(Md.shape[0])
    B = Md @ scene.A0 @ Sigma0
    w = np.linalg.eigvalsh(N)
    if w[0] <= 1e-13 * max(w[-1], 1e-300) and scene.sigma_s2 <= 0:
        raise ConditioningError("singular normal matrix in noiseless LMMSE combiner")
    sol = sla.solve(N, B, assume_a="her")
    G = b0 * sol
    Z = hermitian(Sigma0 - b0 ** 2 * B.conj().T @ sol)
    mse = max(float(np.real(np.trace(Z))), 0.0)
    return EstimationResult(G_opt=G, Z_e=Z, mse=mse, nmse_db=nmse_db(mse, Sigma0))


def port_covariance(Omega: np.ndarray, P_t, P_r) -> np.ndarray:
    Pbar = np.kron(as_matrix(P_t), as_matrix(P_r))
    return hermitian(Pbar.T @ Omega @ Pbar)


def default_kappa(Omega_bar: np.ndarray, scene: Scene) -> float:
    return 1e-6 * float(np.real(np.trace(Omega_bar))) / scene.dim


def mse_from_covariance(R_x: np.ndarray, P_t, P_r, scene: Scene, kappa: float = 0.0) -> float:
    """LMMSE error of any block ``X`` with ``X X^H = R_x``, from ``R_x`` alone.

    Uses the push-through identity, so no inverse of the port covariance is
    needed and rank-deficient scenes are handled exactly.
    """
    Pt, Pr = as_matrix(P_t), as_matrix(P_r)
    nr = Pr.shape[1]
    Pbar = np.kron(Pt, Pr)
    Ob = hermitian(Pbar.T @ scene.Omega @ Pbar) + kappa * np.eye(Pbar.shape[1])
    A = scene.beta0 * Pbar.T @ scene.A0 @ scene.Sigma0
    S = np.kron(psd_sqrt(R_x).conj(), np.eye(nr))
    N = hermitian(S @ Ob @ S) + scene.sigma_s2 * np.eye(S.shape[0])
    SA = S @ A
    if scene.sigma_s2 > 0:
        sol = np.linalg.solve(N, SA)
    else:
        sol = np.linalg.lstsq(N, SA, rcond=1e-12)[0]
    red = float(np.real(np.trace(SA.conj().T @ sol)))
    return max(float(np.real(np.trace(scene.Sigma0))) - red, 0.0)


def mse_via_inversion_lemma(R_x: np.ndarray, P_t, P_r, scene: Scene, kappa: float | None = None) -> float:
    """Covariance-domain MSE written through the inverse port covariance.

    ``kappa=None`` picks a small default loading; ``kappa=0`` with a singular
    port covariance raises :class:`ConditioningError`.
    """
    Pt, Pr = as_matrix(P_t), as_matrix(P_r)
    nr = Pr.shape[1]
    Pbar = np.kron(Pt, Pr)
    Ob = hermitian(Pbar.T @ scene.Omega @ Pbar)
    if kappa is None:
        kappa = default_kappa(Ob, scene)
    Ob = Ob + kappa * np.eye(Ob.shape[0])
    w, U = np.linalg.eigh(Ob)
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise ConditioningError("port covariance is singular; use kappa > 0")
    A = scene.beta0 * Pbar.T @ scene.A0 @ scene.Sigma0
    Rbar = np.kron(np.asarray(R_x).conj(), np.eye(nr))
    s2 = scene.sigma_s2
    # A^H (Ob^-1 - s2 Ob^-1 (Rbar + s2 Ob^-1)^-1 Ob^-1) A in the eigenbasis of Ob,
    # with the inner inverse equilibrated by Ob^(1/2) so small loadings stay accurate
    a = U.conj().T @ A
    red = float(np.sum(np.abs(a) ** 2 / w[:, None]))
    if s2 > 0:
        sw = np.sqrt(w)
        C = U.conj().T @ Rbar @ U
        z = a / sw[:, None]
        inner = hermitian(sw[:, None] * C * sw[None, :]) + s2 * np.eye(w.size)
        red -= s2 * float(np.real(np.trace(z.conj().T @ np.linalg.solve(inner, z))))
    return float(np.real(np.trace(scene.Sigma0))) - red


def _partial_trace_rx(Ob: np.ndarray, nt: int, nr: int) -> np.ndarray:
    """Trace out the receive index of an ``(nt nr) x (nt nr)`` port matrix."""
    return np.einsum("arbr->ab", Ob.reshape(nt, nr, nt, nr))


def trace_lifted(Omega: np.ndarray, P_t, P_r, R_x: np.ndarray) -> float:
    """``Tr(Pbar^T Omega Pbar (R_x^* (x) I))`` via a partial trace."""
    Pt, Pr = as_matrix(P_t), as_matrix(P_r)
    Ob = port_covariance(Omega, Pt, Pr)
    W = _partial_trace_rx(Ob, Pt.shape[1], Pr.shape[1])
    return float(np.real(np.sum(W * np.asarray(R_x))))


def target_sinr(P_t, P_r, scene: Scene, R_x: np.ndarray | None = None, F: np.ndarray | None = None) -> float:
    if R_x is None:
        if F is None:
            raise DomainError("need R_x or F")
        R_x = np.asarray(F) @ np.asarray(F).conj().T
    num = trace_lifted(scene.Omega0, P_t, P_r, R_x)
    den = trace_lifted(scene.OmegaC, P_t, P_r, R_x) + scene.sigma_s2
    if den <= 0:
        return np.inf if num > 0 else 0.0
    return max(num, 0.0) / den


def target_sinr_forms(F: np.ndarray, P_t, P_r, scene: Scene):
    """The SINR through the measurement matrix, the covariance and the lifted precoder."""
    F = np.atleast_2d(np.asarray(F, dtype=complex))
    Pt, Pr = as_matrix(P_t), as_matrix(P_r)
    nr = Pr.shape[1]
    s2 = scene.sigma_s2
    M = MeasurementOperator(F, Pt, Pr).dense()
    f1 = np.real(np.trace(M @ scene.Omega0 @ M.conj().T)) / (np.real(np.trace(M @ scene.OmegaC @ M.conj().T)) + s2)
    Pbar = np.kron(Pt, Pr)
    Rbar = np.kron((F @ F.conj().T).conj(), np.eye(nr))
    f2 = np.real(np.trace(Pbar.T @ scene.Omega0 @ Pbar @ Rbar)) / (
        np.real(np.trace(Pbar.T @ scene.OmegaC @ Pbar @ Rbar)) + s2)
    Fbar = np.kron(F.conj(), np.eye(nr))
    f3 = np.real(np.trace(Fbar.conj().T @ Pbar.T @ scene.Omega0 @ Pbar @ Fbar)) / (
        np.real(np.trace(Fbar.conj().T @ Pbar.T @ scene.OmegaC @ Pbar @ Fbar)) + s2)
    return float(f1), float(f2), float(f3)


def user_sinr(h_k: np.ndarray, F: np.ndarray, sigma_c2: float, k: int) -> float:
    """SINR of user ``k``; every other column of ``F`` counts as interference."""
    F = np.atleast_2d(np.asarray(F))
    if not 0 <= k < F.shape[1]:
        raise DomainError(f"user index {k} out of range")
    g = np.abs(np.asarray(h_k).conj() @ F) ** 2
    interf = float(np.sum(g) - g[k])
    den = interf + sigma_c2
    if den <= 0:
        return np.inf if g[k] > 0 else 0.0
    return float(g[k] / den)


def user_sinrs(H: np.ndarray, F: np.ndarray, sigma_c2: float) -> np.ndarray:
    """SINRs of all users; ``H`` holds the channels ``h_k`` as columns."""
    H = np.asarray(H)
    if H.shape[1] == 0:
        return np.zeros(0)
    G = np.abs(H.conj().T @ np.atleast_2d(F)) ** 2
    K = H.shape[1]
    sig = G[np.arange(K), np.arange(K)]
    return sig / (G.sum(axis=1) - sig + sigma_c2)


def user_lmi_value(h: np.ndarray, R_x: np.ndarray, R_k: np.ndarray, gamma_th: float, sigma_c2: float) -> float:
    """``h^H (R_x - (1 + 1/gamma) R_k) h + sigma_c^2``; nonpositive iff the SINR target holds."""
    h = np.asarray(h)
    Q = R_x - (1.0 + 1.0 / gamma_th) * R_k
    return float(np.real(h.conj() @ Q @ h)) + sigma_c2


def sum_rate(sinrs) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(sinrs, dtype=float))))
