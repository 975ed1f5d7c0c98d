"""Baseline registry: which polarizations each scheme may adapt and on which array."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, SceneConfig
from .errors import ConfigError
from .mm import PolarizationState, Problem, UpdateFlags
from .polar import static_pattern
from .scene import (
    SIGMA0_DETECTION,
    SIGMA0_ESTIMATION,
    CommChannelSet,
    Scene,
    TargetSpec,
    clutter_patches,
    db_to_linear,
    dbm_to_linear,
    make_scene,
    sample_comm_channels,
)


@dataclass(frozen=True)
class Baseline:
    name: str
    flags: UpdateFlags
    # 0: polarization-reconfigurable array; 1 or 2: dual-polarized array
    # with N/2 or N element positions per side
    dual: int = 0


REGISTRY = {
    "static": Baseline("static", UpdateFlags(tx=False, rx=False, user=False)),
    "tx_only": Baseline("tx_only", UpdateFlags(tx=True, rx=False, user=True)),
    "rx_only": Baseline("rx_only", UpdateFlags(tx=False, rx=True, user=True)),
    "tx_rx": Baseline("tx_rx", UpdateFlags(tx=True, rx=True, user=True)),
    "dual_1x": Baseline("dual_1x", UpdateFlags(tx=False, rx=False, user=True), dual=1),
    "dual_2x": Baseline("dual_2x", UpdateFlags(tx=False, rx=False, user=True), dual=2),
}


def get_baseline(name: str) -> Baseline:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown baseline {name!r}") from None


def dual_elements(n: int, multiplier: int) -> int:
    """Element positions of a dual-polarized array with ``multiplier`` x ``n`` ports."""
    if multiplier == 1:
        return max(1, n // 2)
    if multiplier == 2:
        return n
    raise ConfigError(f"dual-polarized multiplier must be 1 or 2, got {multiplier}")


def baseline_static(n_t: int, n_r: int, K: int, objective: str) -> PolarizationState:
    """Fixed starting polarizations: alternating V/H for MSE, all horizontal for SINR."""
    mode = "alternating" if objective == "mse" else "horizontal"
    return PolarizationState.static(n_t, n_r, K, mode)


def scene_from_config(s: SceneConfig, target_cov: str) -> Scene:
    Sigma0 = SIGMA0_ESTIMATION if target_cov == "estimation" else SIGMA0_DETECTION
    target = TargetSpec(np.deg2rad(s.target_angle_deg), float(np.sqrt(dbm_to_linear(s.target_var_dbm))), Sigma0)
    clutter = clutter_patches(s.clutter_angles_deg, dbm_to_linear(s.clutter_var_dbm),
                              s.clutter_cov_scale * np.eye(4))
    return make_scene(s.n_t, s.n_r, s.chi_ant, target, clutter, dbm_to_linear(s.sigma_s2_dbm), s.spacing)


def channels_from_config(s: SceneConfig, seed: int, p_u=None) -> CommChannelSet:
    return sample_comm_channels(s.K, s.n_t, n_paths=s.n_paths, angle_spread_deg=s.angle_spread_deg,
                                chi_user=s.chi_user, chi_ant=s.chi_ant, sigma_c2=dbm_to_linear(s.sigma_c2_dbm),
                                gain_db=s.channel_gain_db, seed=seed, p_u=p_u, spacing=s.spacing)


def apply_sweep(s: SceneConfig, axis: str, value: float) -> SceneConfig:
    from dataclasses import replace

    if axis == "gamma_th_db":
        return replace(s, gamma_th_db=float(value))
    if axis == "chi_ant":
        return replace(s, chi_ant=float(value))
    if axis == "tx_snr_db":
        return replace(s, rho_t_dbm=s.sigma_s2_dbm + float(value))
    if axis == "n_antennas":
        return replace(s, n_t=int(value), n_r=int(value))
    if axis == "target_angle_deg":
        return replace(s, target_angle_deg=float(value))
    raise ConfigError(f"unknown sweep axis {axis!r}")


@dataclass
class Case:
    baseline: Baseline
    problem: Problem
    init: PolarizationState


def prepare_case(cfg: ExperimentConfig, baseline: str, value: float, seed: int) -> Case:
    """Scene, channels and starting point for one (baseline, sweep value, seed)."""
    b = get_baseline(baseline)
    s = apply_sweep(cfg.scene, cfg.sweep_axis, value)
    scene = scene_from_config(s, cfg.target_cov)
    static = baseline_static(s.n_t, s.n_r, s.K, cfg.objective)
    channels = channels_from_config(s, seed, static.p_u if s.K else None)
    if b.dual:
        n_t, n_r = dual_elements(s.n_t, b.dual), dual_elements(s.n_r, b.dual)
        scene = scene.resized(n_t, n_r)
        channels = channels.resized(n_t)
        init = PolarizationState.dual_polarized(n_t, n_r, static.p_u)
    else:
        init = static
    problem = Problem(cfg.objective, scene, channels, db_to_linear(s.gamma_th_db), dbm_to_linear(s.rho_t_dbm),
                      dbm_to_linear(s.sigma_c2_dbm), s.L)
    return Case(b, problem, init)
