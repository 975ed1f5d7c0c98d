"""Polarization-aware array algebra.

Conventions used throughout the package:

* ``vec`` stacks columns (Fortran order).
* A depolarization matrix ``Phi`` has rows indexed by the receive
  polarization and columns by the transmit polarization, so
  ``vec(Phi) = [HH, VH, HV, VV]`` in (rx, tx) notation.
* Polarization vectors are real 2-vectors ``[p_H, p_V]`` with unit norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, ShapeError

_RENORM_TOL = 1e-9


def vec(A: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(A).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v).reshape((rows, cols), order="F")


@dataclass(frozen=True)
class XpdMatrix:
    """Antenna cross-polar leakage matrix ``V`` for leakage ``chi``."""

    chi: float
    V: np.ndarray = field(repr=False)


def xpd_matrix(chi: float) -> XpdMatrix:
    chi = float(chi)
    if not 0.0 <= chi <= 1.0 or not np.isfinite(chi):
        raise DomainError(f"XPD leakage must lie in [0, 1], got {chi}")
    s = np.sqrt(chi)
    V = np.array([[1.0, s], [s, 1.0]]) / np.sqrt(1.0 + chi)
    V.setflags(write=False)
    return XpdMatrix(chi=chi, V=V)


@dataclass(frozen=True)
class PolVector:
    """A real unit-norm polarization combining vector ``[p_H, p_V]``.

    Inputs within ``1e-9`` of unit norm are silently renormalized; larger
    deviations are rejected. Use :meth:`from_direction` to normalize an
    arbitrary nonzero vector.
    """

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if p.shape != (2,):
            raise ShapeError(f"polarization vector must have 2 entries, got {p.shape}")
        if np.iscomplexobj(self.p):
            raise DomainError("polarization vectors are real")
        n = np.linalg.norm(p)
        if abs(n - 1.0) > _RENORM_TOL:
            raise DomainError(f"polarization vector norm {n} is not 1")
        p = p / n
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_direction(cls, v) -> "PolVector":
        v = np.real_if_close(np.asarray(v, dtype=float)).reshape(-1)
        n = np.linalg.norm(v)
        if n == 0:
            raise DomainError("cannot normalize a zero vector")
        return cls(v / n)

    @classmethod
    def horizontal(cls) -> "PolVector":
        return cls(np.array([1.0, 0.0]))

    @classmethod
    def vertical(cls) -> "PolVector":
        return cls(np.array([0.0, 1.0]))


@dataclass(frozen=True)
class PolBlockMatrix:
    """``P = blkdiag(p_1, ..., p_N)``, a real ``2N x N`` matrix."""

    vectors: tuple

    def __post_init__(self):
        vs = tuple(v if isinstance(v, PolVector) else PolVector(v) for v in self.vectors)
        if not vs:
            raise ShapeError("at least one polarization vector is required")
        object.__setattr__(self, "vectors", vs)

    @classmethod
    def from_stacked(cls, p: np.ndarray) -> "PolBlockMatrix":
        """Build from the concatenated vector ``[p_1; p_2; ...]``."""
        p = np.asarray(p, dtype=float).reshape(-1, 2)
        return cls(tuple(PolVector(row) for row in p))

    @property
    def n(self) -> int:
        return len(self.vectors)

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([v.p for v in self.vectors])

    @property
    def P(self) -> np.ndarray:
        N = self.n
        P = np.zeros((2 * N, N))
        for i, v in enumerate(self.vectors):
            P[2 * i:2 * i + 2, i] = v.p
        return P


def block_matrix(p_stacked: np.ndarray) -> np.ndarray:
    """Dense ``blkdiag`` of the 2-blocks of ``p_stacked`` (no normalization)."""
    p = np.asarray(p_stacked, dtype=float).reshape(-1, 2)
    N = p.shape[0]
    P = np.zeros((2 * N, N))
    idx = np.arange(N)
    P[2 * idx, idx] = p[:, 0]
    P[2 * idx + 1, idx] = p[:, 1]
    return P


def static_pattern(n: int, mode: str = "alternating") -> PolBlockMatrix:
    """Fixed polarization layouts used by the static baseline.

    ``alternating``: 1-based odd antennas vertical, even antennas horizontal.
    ``horizontal``: every antenna horizontal.
    """
    if n < 1:
        raise DomainError("need at least one antenna")
    if mode == "alternating":
        vs = [PolVector.vertical() if i % 2 == 0 else PolVector.horizontal() for i in range(n)]
    elif mode == "horizontal":
        vs = [PolVector.horizontal() for _ in range(n)]
    else:
        raise DomainError(f"unknown static pattern {mode!r}")
    return PolBlockMatrix(tuple(vs))


def steering_ula(N: int, theta: float, spacing_wavelengths: float = 0.5) -> np.ndarray:
    """Uniform linear array steering vector with phase reference at element 1."""
    if N < 1:
        raise DomainError("array must have at least one element")
    n = np.arange(N)
    return np.exp(2j * np.pi * spacing_wavelengths * n * np.sin(theta))


def polarized_response(a: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``A(theta) = a (x) V``, the ``2N x 2`` pre-polarization response."""
    return np.kron(np.asarray(a).reshape(-1, 1), V)


@dataclass(frozen=True)
class NetArrayResponse:
    theta: float
    a: np.ndarray
    A: np.ndarray
    A_net: np.ndarray


def net_array_response(a: np.ndarray, P, V, theta: float = float("nan")) -> NetArrayResponse:
    a = np.asarray(a).reshape(-1)
    Pm = P.P if isinstance(P, PolBlockMatrix) else np.asarray(P)
    Vm = V.V if isinstance(V, XpdMatrix) else np.asarray(V)
    if Pm.shape[0] != 2 * a.size:
        raise ShapeError(f"P has {Pm.shape[0]} rows but the array has {a.size} elements")
    A = polarized_response(a, Vm)
    return NetArrayResponse(theta=theta, a=a, A=A, A_net=Pm.T @ A)


def commutation_matrix(m: int, n: int) -> sp.csr_matrix:
    """Sparse ``K_{m,n}`` with ``K vec(A) = vec(A^T)`` for every ``m x n`` A."""
    if m < 1 or n < 1:
        raise DomainError("commutation matrix dimensions must be positive")
    i, j = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    rows = (j + i * n).ravel()
    cols = (i + j * m).ravel()
    return sp.csr_matrix((np.ones(m * n), (rows, cols)), shape=(m * n, m * n))


def _selection(N: int) -> sp.csr_matrix:
    """``Theta = blkdiag(e_1, ..., e_N) (x) I_2`` so that vec(P) = Theta p."""
    E = sp.block_diag([sp.csr_matrix(np.eye(N)[:, [k]]) for k in range(N)], format="csr")
    return sp.kron(E, sp.identity(2), format="csr")


def _vec_kron_lift(m: int, n: int, p: int, q: int) -> sp.csr_matrix:
    """The map ``vec(A) (x) vec(B) -> vec(A (x) B)`` for A m x n, B p x q."""
    return sp.kron(sp.kron(sp.identity(n), commutation_matrix(q, m)), sp.identity(p), format="csr")


@dataclass(frozen=True)
class LiftOperators:
    """Binary matrices linking polarization vectors to Kronecker lifts.

    ``vec(P_t (x) I_Nr) = Ibar_t vec(P_t)``, ``vec(I_Nt (x) P_r) = Ibar_r vec(P_r)``,
    ``vec(P_t) = Theta_t p_t`` and ``vec(P_r) = Theta_r p_r``.
    """

    n_t: int
    n_r: int
    Theta_t: sp.csr_matrix
    Theta_r: sp.csr_matrix
    Ibar_t: sp.csr_matrix
    Ibar_r: sp.csr_matrix

    def tx_coefficients(self, Lam: np.ndarray, P_r: np.ndarray) -> np.ndarray:
        """Vector ``c`` with ``Tr(Pbar^T Lam) = p_t^T c`` for ``Pbar = P_t (x) P_r``."""
        Pbar_r = np.kron(np.eye(2 * self.n_t), P_r)
        w = vec(Pbar_r.T @ Lam)
        return self.Theta_t.T @ (self.Ibar_t.T @ w)

    def rx_coefficients(self, Lam: np.ndarray, P_t: np.ndarray) -> np.ndarray:
        """Vector ``c`` with ``Tr(Pbar^T Lam) = p_r^T c`` for ``Pbar = P_t (x) P_r``."""
        Pbar_t = np.kron(P_t, np.eye(2 * self.n_r))
        w = vec(Pbar_t.T @ Lam)
        return self.Theta_r.T @ (self.Ibar_r.T @ w)


def build_lift_operators(n_t: int, n_r: int) -> LiftOperators:
    if n_t < 1 or n_r < 1:
        raise DomainError("antenna counts must be positive")
    # vec(P_t (x) I) = lift (vec P_t (x) vec I); the second factor is a constant
    lift_t = _vec_kron_lift(2 * n_t, n_t, n_r, n_r)
    Ibar_t = lift_t @ sp.kron(sp.identity(2 * n_t * n_t), sp.csr_matrix(vec(np.eye(n_r)).reshape(-1, 1)))
    lift_r = _vec_kron_lift(n_t, n_t, 2 * n_r, n_r)
    Ibar_r = lift_r @ sp.kron(sp.csr_matrix(vec(np.eye(n_t)).reshape(-1, 1)), sp.identity(2 * n_r * n_r))
    return LiftOperators(
        n_t=n_t,
        n_r=n_r,
        Theta_t=_selection(n_t),
        Theta_r=_selection(n_r),
        Ibar_t=sp.csr_matrix(Ibar_t),
        Ibar_r=sp.csr_matrix(Ibar_r),
    )


def rotation(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s], [s, c]])


def hermitian(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.conj().T)


def as_matrix(P) -> np.ndarray:
    """Accept a :class:`PolBlockMatrix` or any dense matrix."""
    return P.P if isinstance(P, PolBlockMatrix) else np.asarray(P)


def stack_blocks(vectors: Iterable) -> np.ndarray:
    return np.concatenate([np.asarray(v.p if isinstance(v, PolVector) else v, dtype=float) for v in vectors])


def normalize_blocks(p: np.ndarray, fallback: Sequence | None = None, tol: float = 1e-12) -> np.ndarray:
    """Scale every 2-block of ``p`` to unit norm.

    Blocks with norm below ``tol`` take the matching block of ``fallback``.
    """
    p = np.asarray(p, dtype=float).reshape(-1, 2).copy()
    norms = np.linalg.norm(p, axis=1)
    small = norms < tol
    if np.any(small):
        if fallback is None:
            raise DomainError("zero-norm polarization block without fallback")
        fb = np.asarray(fallback, dtype=float).reshape(-1, 2)
        p[small] = fb[small]
        norms[small] = np.linalg.norm(p[small], axis=1)
    return (p / norms[:, None]).reshape(-1)
