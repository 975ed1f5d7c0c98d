"""Targets, clutter, sensing covariances and synthetic user channels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError, ValidationError
from .polar import (
    XpdMatrix,
    as_matrix,
    hermitian,
    polarized_response,
    rotation,
    steering_ula,
    unvec,
    xpd_matrix,
)

log = logging.getLogger(__name__)

_PSD_TOL = 1e-10

_EPS = 1 + 1j


def _sigma0(diag):
    S = np.diag(np.asarray(diag, dtype=complex))
    off = {(0, 1): 0.06, (0, 2): 0.05, (0, 3): 0.04, (1, 2): 0.03, (1, 3): 0.03, (2, 3): 0.03}
    for (i, j), c in off.items():
        S[i, j] = c * _EPS
        S[j, i] = c * np.conj(_EPS)
    return S


# Reference depolarization covariances: a generic target for the estimation
# study and a strongly VV-dominant target for the detection study.
SIGMA0_ESTIMATION = _sigma0([0.2, 0.6, 0.3, 0.9])
SIGMA0_DETECTION = _sigma0([0.1, 0.3, 0.1, 0.9])


def dbm_to_linear(x_dbm: float) -> float:
    """dBm to milliwatts."""
    return float(10.0 ** (np.asarray(x_dbm, dtype=float) / 10.0))


def db_to_linear(x_db: float) -> float:
    return float(10.0 ** (np.asarray(x_db, dtype=float) / 10.0))


def linear_to_db(x: float) -> float:
    x = float(x)
    return 10.0 * np.log10(x) if x > 0 else -np.inf


def project_psd(S: np.ndarray, name: str = "matrix", tol: float = _PSD_TOL) -> np.ndarray:
    """Symmetrize and clip small negative eigenvalues; reject large ones."""
    S = hermitian(np.asarray(S, dtype=complex))
    w, U = np.linalg.eigh(S)
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.min() < -1e-6 * scale:
        raise ValidationError(f"{name} is not positive semidefinite (min eigenvalue {w.min():.3e})")
    if w.min() < -tol:
        log.warning("%s is slightly indefinite (min eigenvalue %.3e); clipping", name, w.min())
        S = hermitian((U * np.clip(w, 0, None)) @ U.conj().T)
    return S


@dataclass(frozen=True)
class TargetSpec:
    theta0: float
    beta0: float
    Sigma0: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.beta0 > 0:
            raise DomainError("target propagation loss must be positive")
        S = np.asarray(self.Sigma0)
        if S.shape != (4, 4):
            raise ShapeError("Sigma0 must be 4x4")
        object.__setattr__(self, "Sigma0", project_psd(S, "Sigma0"))


@dataclass(frozen=True)
class ClutterPatch:
    theta_q: float
    sigma_q2: float
    Sigma_q: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.sigma_q2 < 0:
            raise DomainError("clutter variance must be nonnegative")
        S = np.asarray(self.Sigma_q)
        if S.shape != (4, 4):
            raise ShapeError("Sigma_q must be 4x4")
        object.__setattr__(self, "Sigma_q", project_psd(S, "Sigma_q"))


def array_response(n: int, theta: float, V: np.ndarray, spacing: float = 0.5) -> np.ndarray:
    """``a(theta) (x) V`` for an ``n``-element ULA."""
    return polarized_response(steering_ula(n, theta, spacing), V)


def joint_response(n_t: int, n_r: int, theta: float, V: np.ndarray, spacing: float = 0.5) -> np.ndarray:
    """``A_t(theta) (x) A_r(theta)``, the ``4 N_t N_r x 4`` matrix acting on vec(Phi)."""
    return np.kron(array_response(n_t, theta, V, spacing), array_response(n_r, theta, V, spacing))


@dataclass(frozen=True)
class Scene:
    """Sensing geometry plus the induced second-order statistics."""

    target: TargetSpec
    clutter: tuple
    sigma_s2: float
    n_t: int
    n_r: int
    xpd: XpdMatrix
    spacing: float = 0.5
    A0: np.ndarray = field(default=None, repr=False)
    Omega0: np.ndarray = field(default=None, repr=False)
    OmegaC: np.ndarray = field(default=None, repr=False)
    Omega: np.ndarray = field(default=None, repr=False)

    @property
    def Sigma0(self) -> np.ndarray:
        return self.target.Sigma0

    @property
    def beta0(self) -> float:
        return self.target.beta0

    @property
    def dim(self) -> int:
        return 4 * self.n_t * self.n_r

    def A_t(self, theta: float) -> np.ndarray:
        return array_response(self.n_t, theta, self.xpd.V, self.spacing)

    def A_r(self, theta: float) -> np.ndarray:
        return array_response(self.n_r, theta, self.xpd.V, self.spacing)

    def with_noise(self, sigma_s2: float) -> "Scene":
        return make_scene(self.n_t, self.n_r, self.xpd.chi, self.target, self.clutter, sigma_s2, self.spacing)

    def resized(self, n_t: int, n_r: int) -> "Scene":
        return make_scene(n_t, n_r, self.xpd.chi, self.target, self.clutter, self.sigma_s2, self.spacing)

    def to_dict(self) -> dict:
        def cplx(M):
            M = np.asarray(M)
            return {"re": M.real.tolist(), "im": M.imag.tolist()}

        return {
            "n_t": self.n_t,
            "n_r": self.n_r,
            "chi_ant": self.xpd.chi,
            "spacing": self.spacing,
            "sigma_s2": self.sigma_s2,
            "target": {"theta0": self.target.theta0, "beta0": self.target.beta0, "Sigma0": cplx(self.target.Sigma0)},
            "clutter": [
                {"theta_q": c.theta_q, "sigma_q2": c.sigma_q2, "Sigma_q": cplx(c.Sigma_q)} for c in self.clutter
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        def cplx(x):
            return np.asarray(x["re"]) + 1j * np.asarray(x["im"])

        t = d["target"]
        target = TargetSpec(t["theta0"], t["beta0"], cplx(t["Sigma0"]))
        clutter = [ClutterPatch(c["theta_q"], c["sigma_q2"], cplx(c["Sigma_q"])) for c in d["clutter"]]
        return make_scene(d["n_t"], d["n_r"], d["chi_ant"], target, clutter, d["sigma_s2"], d.get("spacing", 0.5))


def sensing_covariances(target: TargetSpec, clutter: Sequence[ClutterPatch], n_t: int, n_r: int,
                        V: np.ndarray, spacing: float = 0.5):
    """Return ``(A0, Omega0, OmegaC, Omega)``."""
    A0 = joint_response(n_t, n_r, target.theta0, V, spacing)
    Omega0 = hermitian(target.beta0 ** 2 * A0 @ target.Sigma0 @ A0.conj().T)
    OmegaC = np.zeros_like(Omega0)
    for c in clutter:
        Aq = joint_response(n_t, n_r, c.theta_q, V, spacing)
        OmegaC += c.sigma_q2 * Aq @ c.Sigma_q @ Aq.conj().T
    OmegaC = hermitian(OmegaC)
    return A0, Omega0, OmegaC, hermitian(Omega0 + OmegaC)


def make_scene(n_t: int, n_r: int, chi_ant: float, target: TargetSpec, clutter: Sequence[ClutterPatch],
               sigma_s2: float, spacing: float = 0.5) -> Scene:
    if n_t < 1 or n_r < 1:
        raise DomainError("antenna counts must be positive")
    if sigma_s2 < 0:
        raise DomainError("noise power must be nonnegative")
    xpd = xpd_matrix(chi_ant)
    clutter = tuple(clutter)
    A0, O0, Oc, O = sensing_covariances(target, clutter, n_t, n_r, xpd.V, spacing)
    return Scene(target=target, clutter=clutter, sigma_s2=float(sigma_s2), n_t=n_t, n_r=n_r, xpd=xpd,
                 spacing=spacing, A0=A0, Omega0=O0, OmegaC=Oc, Omega=O)


def _response_matrix(scene: Scene, theta: float, beta, phi, P_t, P_r) -> np.ndarray:
    Pt, Pr = as_matrix(P_t), as_matrix(P_r)
    At, Ar = scene.A_t(theta), scene.A_r(theta)
    if Pt.shape[0] != At.shape[0] or Pr.shape[0] != Ar.shape[0]:
        raise ShapeError("polarization matrices do not match the scene arrays")
    Phi = unvec(np.asarray(phi), 2, 2)
    return beta * Pr.T @ Ar @ Phi @ At.T @ Pt


def target_response(scene: Scene, P_t, P_r, phi0: np.ndarray) -> np.ndarray:
    """Noiseless target echo matrix ``T`` (``N_r x N_t`` port space)."""
    return _response_matrix(scene, scene.target.theta0, scene.target.beta0, phi0, P_t, P_r)


def clutter_response(scene: Scene, P_t, P_r, draws) -> np.ndarray:
    """Sum of per-patch echoes; ``draws`` holds one ``(beta_q, phi_q)`` per patch."""
    draws = list(draws)
    if len(draws) != len(scene.clutter):
        raise ShapeError(f"expected {len(scene.clutter)} clutter draws, got {len(draws)}")
    Pt, Pr = as_matrix(P_t), as_matrix(P_r)
    C = np.zeros((Pr.shape[1], Pt.shape[1]), dtype=complex)
    for patch, (beta, phi) in zip(scene.clutter, draws):
        C += _response_matrix(scene, patch.theta_q, beta, phi, Pt, Pr)
    return C


def sample_phi(Sigma: np.ndarray, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Circular complex Gaussian draws with covariance ``Sigma``."""
    w, U = np.linalg.eigh(hermitian(Sigma))
    L = U * np.sqrt(np.clip(w, 0, None))
    shape = (4,) if size is None else (size, 4)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return z @ L.T


# ---------------------------------------------------------------------------
# Communication channels


def user_depolarization(chi_user: float, phases: np.ndarray) -> np.ndarray:
    """Per-user channel depolarization matrix from the four phase shifts.

    ``phases`` is ordered ``[HH, HV, VH, VV]``.
    """
    hh, hv, vh, vv = np.exp(1j * np.asarray(phases))
    s = np.sqrt(chi_user)
    return np.array([[hh, s * hv], [s * vh, vv]]) / np.sqrt(1.0 + chi_user)


@dataclass(frozen=True)
class UserChannel:
    """Geometric multipath parameters of one single-antenna dual-port user."""

    betas: np.ndarray
    aods: np.ndarray
    Phi: np.ndarray
    psi: float
    chi_user: float
    p_u: np.ndarray

    @property
    def n_paths(self) -> int:
        return int(self.betas.size)

    def H_up(self, n_t: int, V_bs: np.ndarray, V_user: np.ndarray, spacing: float = 0.5) -> np.ndarray:
        """Pre-polarization channel, ``2 x 2 N_t``."""
        Q = rotation(self.psi)
        H = np.zeros((2, 2 * n_t), dtype=complex)
        for beta, th in zip(self.betas, self.aods):
            H += beta * V_user @ self.Phi @ Q @ array_response(n_t, th, V_bs, spacing).T
        return H


@dataclass(frozen=True)
class CommChannelSet:
    users: tuple
    n_t: int
    chi_ant: float
    sigma_c2: float
    spacing: float = 0.5
    H_up: tuple = field(default=(), repr=False)

    @property
    def K(self) -> int:
        return len(self.users)

    def p_u(self) -> np.ndarray:
        """Stacked user polarizations, ``K x 2``."""
        return np.array([u.p_u for u in self.users]).reshape(-1, 2)

    def with_pu(self, p_u) -> "CommChannelSet":
        p_u = np.asarray(p_u, dtype=float).reshape(-1, 2)
        users = tuple(
            UserChannel(u.betas, u.aods, u.Phi, u.psi, u.chi_user, p_u[k] / np.linalg.norm(p_u[k]))
            for k, u in enumerate(self.users)
        )
        return CommChannelSet(users, self.n_t, self.chi_ant, self.sigma_c2, self.spacing, self.H_up)

    def resized(self, n_t: int, spacing: float | None = None) -> "CommChannelSet":
        """Same propagation paths seen by a different transmit array."""
        sp_ = self.spacing if spacing is None else spacing
        return realize_channels(self.users, n_t, self.chi_ant, self.sigma_c2, sp_)

    def channels(self, P_t) -> np.ndarray:
        """Effective channels ``h_k`` as columns of an ``N_port x K`` matrix."""
        if self.K == 0:
            return np.zeros((as_matrix(P_t).shape[1], 0), dtype=complex)
        return np.column_stack([effective_user_channel(H, u.p_u, P_t) for H, u in zip(self.H_up, self.users)])


def realize_channels(users: Sequence[UserChannel], n_t: int, chi_ant: float, sigma_c2: float,
                     spacing: float = 0.5) -> CommChannelSet:
    V = xpd_matrix(chi_ant).V
    H = tuple(u.H_up(n_t, V, V, spacing) for u in users)
    return CommChannelSet(tuple(users), n_t, chi_ant, sigma_c2, spacing, H)


def sample_comm_channels(K: int, n_t: int, n_paths: int = 3, angle_spread_deg: float = 60.0,
                         chi_user: float = 0.1, chi_ant: float = 0.1, sigma_c2: float = 1.0,
                         gain_db: float = 0.0, seed=None, p_u=None, spacing: float = 0.5) -> CommChannelSet:
    """Draw a synthetic geometric multipath channel for ``K`` users.

    Path gains are circular Gaussian with total power ``2 * gain`` so that
    ``E ||H_up||_F^2 = 4 N_t gain`` and, for a fixed one-hot polarization at
    both ends, ``E ||h_k||^2`` is about ``N_t gain``.
    """
    if K < 0:
        raise DomainError("user count must be nonnegative")
    if n_paths < 1:
        raise DomainError("at least one path per user is required")
    rng = np.random.default_rng(seed)
    gain = db_to_linear(gain_db)
    spread = np.deg2rad(angle_spread_deg)
    pu = None if p_u is None else np.asarray(p_u, dtype=float).reshape(-1, 2)
    users = []
    for k in range(K):
        aods = rng.uniform(-spread, spread, n_paths)
        var = 2.0 * gain / n_paths
        betas = np.sqrt(var / 2) * (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths))
        phases = rng.uniform(0, 2 * np.pi, 4)
        psi = rng.uniform(0, 2 * np.pi)
        Phi = user_depolarization(chi_user, phases)
        pk = np.array([1.0, 0.0]) if pu is None else pu[k % len(pu)] / np.linalg.norm(pu[k % len(pu)])
        users.append(UserChannel(betas, aods, Phi, psi, chi_user, pk))
    return realize_channels(users, n_t, chi_ant, sigma_c2, spacing)


def effective_user_channel(H_up: np.ndarray, p_u, P_t) -> np.ndarray:
    """``h_k = P_t^T H_up^H p_u`` so that the user observes ``h_k^H x``."""
    H_up = np.asarray(H_up)
    p_u = np.asarray(getattr(p_u, "p", p_u), dtype=float).reshape(-1)
    Pt = as_matrix(P_t)
    if H_up.shape[0] != 2 or p_u.size != 2:
        raise ShapeError("user channel must have two polarization rows")
    if H_up.shape[1] != Pt.shape[0]:
        raise ShapeError(f"H_up has {H_up.shape[1]} columns but P_t has {Pt.shape[0]} rows")
    return Pt.T @ (H_up.conj().T @ p_u)


def clutter_patches(angles_deg: Sequence[float], sigma_q2: float, Sigma_q: np.ndarray | None = None):
    S = 0.2 * np.eye(4) if Sigma_q is None else Sigma_q
    return [ClutterPatch(np.deg2rad(a), sigma_q2, S) for a in angles_deg]
