"""Experiment configuration loaded from YAML with line-aware validation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigError

SWEEP_AXES = ("gamma_th_db", "chi_ant", "tx_snr_db", "n_antennas", "target_angle_deg")
BASELINES = ("static", "tx_only", "rx_only", "tx_rx", "dual_1x", "dual_2x")
OBJECTIVES = ("mse", "sinr")

# Array sizes per named profile; everything else keeps the scene defaults.
PROFILES = {
    "paper": {"n_t": 6, "n_r": 6, "L": 16},
    "desk": {"n_t": 4, "n_r": 4, "L": 8},
}


@dataclass(frozen=True)
class SceneConfig:
    n_t: int = 6
    n_r: int = 6
    L: int = 16
    rho_t_dbm: float = 30.0
    sigma_s2_dbm: float = 0.0
    sigma_c2_dbm: float = 0.0
    chi_ant: float = 0.1
    chi_user: float = 0.1
    target_angle_deg: float = 0.0
    target_var_dbm: float = -20.0
    target_cov: str | None = None
    clutter_angles_deg: tuple = (-80.0, -45.0, 30.0, 60.0)
    clutter_var_dbm: float = -20.0
    clutter_cov_scale: float = 0.2
    K: int = 2
    gamma_th_db: float = 10.0
    n_paths: int = 3
    angle_spread_deg: float = 60.0
    channel_gain_db: float = 0.0
    spacing: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    objective: str = "mse"
    scene: SceneConfig = field(default_factory=SceneConfig)
    sweep_axis: str = "gamma_th_db"
    sweep_values: tuple = (10.0,)
    baselines: tuple = ("static", "tx_rx")
    seeds: tuple = tuple(range(50))
    outer_iters: int = 20
    outer_tol: float = 1e-4
    inner_iters: int = 100
    workers: int = 1
    out_dir: str = "results"
    csv_name: str = "results.csv"
    plots: bool = True
    record_wall_time: bool = True
    dump_conic: bool = False
    source: str = field(default="<memory>", compare=False)

    @property
    def target_cov(self) -> str:
        """Reference depolarization covariance, by objective unless set explicitly."""
        if self.scene.target_cov:
            return self.scene.target_cov
        return "estimation" if self.objective == "mse" else "detection"

    @property
    def static_mode(self) -> str:
        return "alternating" if self.objective == "mse" else "horizontal"

    def with_overrides(self, profile: str | None = None, seeds: int | None = None, baselines=None,
                       objective: str | None = None, out_dir: str | None = None,
                       dump_conic: bool | None = None) -> "ExperimentConfig":
        cfg = self
        if profile is not None:
            if profile not in PROFILES:
                raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
            cfg = replace(cfg, scene=replace(cfg.scene, **PROFILES[profile]))
        if seeds is not None:
            if seeds < 1:
                raise ConfigError("--seeds must be positive")
            cfg = replace(cfg, seeds=tuple(range(seeds)))
        if baselines is not None:
            cfg = replace(cfg, baselines=tuple(baselines))
        if objective is not None:
            cfg = replace(cfg, objective=objective)
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        if dump_conic is not None:
            cfg = replace(cfg, dump_conic=dump_conic)
        validate(cfg)
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return d


class _Located(dict):
    """Mapping that remembers the source line of each key."""

    def __init__(self, *args, lines=None, line=0):
        super().__init__(*args)
        self.lines = lines or {}
        self.line = line


def _construct(node):
    if isinstance(node, yaml.MappingNode):
        out = _Located(line=node.start_mark.line + 1)
        for k, v in node.value:
            key = _construct(k)
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1)
            out[key] = _construct(v)
            out.lines[key] = k.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v) for v in node.value]
    return yaml.safe_load(yaml.serialize(node))


def _fields_of(cls) -> dict:
    return {f.name: f for f in fields(cls)}


def _coerce(value, default, key: str, line: int):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false", line)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer", line)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number", line)
        if not math.isfinite(float(value)):
            raise ConfigError(f"{key} must be finite", line)
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list", line)
        return tuple(value)
    return value


def _build(cls, data: dict, prefix: str = ""):
    known = _fields_of(cls)
    kwargs = {}
    lines = getattr(data, "lines", {})
    for key, value in data.items():
        line = lines.get(key, getattr(data, "line", 0))
        if key not in known or key == "source":
            raise ConfigError(f"unknown key {prefix + str(key)!r}", line)
        f = known[key]
        default = f.default if f.default is not f.default_factory else None
        if default is None and f.default_factory is not None and f.default_factory is not dict:
            try:
                default = f.default_factory()
            except TypeError:
                default = None
        kwargs[key] = value if default is None else _coerce(value, default, prefix + key, line)
    return cls(**kwargs)


def _line_of(data, *path) -> int:
    cur = data
    line = getattr(data, "line", 0)
    for p in path:
        if not isinstance(cur, dict) or p not in cur:
            break
        line = cur.lines.get(p, line) if hasattr(cur, "lines") else line
        cur = cur[p]
    return line


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse a YAML document into a validated :class:`ExperimentConfig`."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else None
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}", line) from exc
    if node is None:
        raise ConfigError(f"{source}: empty configuration")
    try:
        data = _construct(node)
    except ConfigError as exc:
        raise ConfigError(f"{source}:{exc.line}: {exc.message}", exc.line) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping", getattr(node.start_mark, "line", 0) + 1)
    data = _Located(data, lines=dict(data.lines), line=data.line)

    try:
        profile = data.pop("profile", None)
        scene_data = data.pop("scene", _Located())
        if not isinstance(scene_data, dict):
            raise ConfigError("scene must be a mapping", _line_of(data, "scene"))
        scene_kw = dict(PROFILES.get(profile, {})) if profile else {}
        if profile and profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}", data.lines.get("profile"))
        scene = _build(SceneConfig, scene_data, "scene.")
        scene = replace(scene, **{k: v for k, v in scene_kw.items() if k not in scene_data})

        sweep = data.pop("sweep", None)
        kw = {}
        if sweep is not None:
            if not isinstance(sweep, dict):
                raise ConfigError("sweep must be a mapping with 'axis' and 'values'", data.lines.get("sweep"))
            extra = set(sweep) - {"axis", "values"}
            if extra:
                raise ConfigError(f"unknown key in sweep: {sorted(extra)}", sweep.lines[sorted(extra)[0]])
            if "axis" in sweep:
                kw["sweep_axis"] = sweep["axis"]
            if "values" in sweep:
                vals = sweep["values"]
                if not isinstance(vals, list):
                    raise ConfigError("sweep.values must be a list", sweep.lines["values"])
                kw["sweep_values"] = tuple(vals)
        seeds = data.pop("seeds", None)
        if seeds is not None:
            if isinstance(seeds, int) and not isinstance(seeds, bool):
                if seeds < 1:
                    raise ConfigError("seeds must be positive", data.lines["seeds"])
                kw["seeds"] = tuple(range(seeds))
            elif isinstance(seeds, list):
                kw["seeds"] = tuple(seeds)
            else:
                raise ConfigError("seeds must be a count or a list of integers", data.lines["seeds"])
        base = _build(ExperimentConfig, data)
        cfg = replace(base, scene=scene, source=source, **kw)
    except ConfigError as exc:
        if exc.line is not None and not str(exc).startswith(source):
            raise ConfigError(f"{source}:{exc.line}: {exc.message}", exc.line) from None
        raise
    try:
        validate(cfg)
    except ConfigError as exc:
        key = exc.key or ""
        line = _locate_key(data, scene_data, key, sweep)
        raise ConfigError(f"{source}:{line}: {exc.message}" if line else f"{source}: {exc.message}", line) from None
    return cfg


def _locate_key(data, scene_data, key: str, sweep) -> int | None:
    if key.startswith("scene."):
        k = key.split(".", 1)[1]
        return getattr(scene_data, "lines", {}).get(k) or data.lines.get("scene")
    if key in ("sweep_axis", "sweep_values") and isinstance(sweep, dict):
        return sweep.lines.get("axis" if key == "sweep_axis" else "values") or data.lines.get("sweep")
    return data.lines.get(key)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def _check(cond: bool, message: str, key: str):
    if not cond:
        raise ConfigError(message, key=key)


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(float(x))


def validate(cfg: ExperimentConfig) -> None:
    """Raise :class:`ConfigError` naming the offending key."""
    s = cfg.scene
    _check(cfg.objective in OBJECTIVES, f"objective must be one of {OBJECTIVES}", "objective")
    _check(cfg.sweep_axis in SWEEP_AXES, f"sweep axis must be one of {SWEEP_AXES}", "sweep_axis")
    _check(len(cfg.sweep_values) > 0, "sweep grid is empty", "sweep_values")
    _check(all(_finite(v) for v in cfg.sweep_values), "sweep values must be finite numbers", "sweep_values")
    if cfg.sweep_axis == "n_antennas":
        _check(all(float(v).is_integer() and v >= 1 for v in cfg.sweep_values),
               "antenna counts must be positive integers", "sweep_values")
    if cfg.sweep_axis == "chi_ant":
        _check(all(0 <= v <= 1 for v in cfg.sweep_values), "XPD values must lie in [0, 1]", "sweep_values")
    _check(len(cfg.baselines) > 0, "baseline list is empty", "baselines")
    bad = [b for b in cfg.baselines if b not in BASELINES]
    _check(not bad, f"unknown baseline(s) {bad}; choose from {BASELINES}", "baselines")
    _check(len(set(cfg.baselines)) == len(cfg.baselines), "baselines must be distinct", "baselines")
    _check(len(cfg.seeds) > 0, "at least one seed is required", "seeds")
    _check(all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in cfg.seeds),
           "seeds must be nonnegative integers", "seeds")
    _check(len(set(cfg.seeds)) == len(cfg.seeds), "seeds must be distinct", "seeds")
    _check(cfg.outer_iters >= 1, "outer_iters must be at least 1", "outer_iters")
    _check(cfg.inner_iters >= 0, "inner_iters must be nonnegative", "inner_iters")
    _check(cfg.workers >= 1, "workers must be at least 1", "workers")
    _check(s.n_t >= 1 and s.n_r >= 1, "array sizes must be positive", "scene.n_t")
    n_max = max([s.n_t] + ([int(v) for v in cfg.sweep_values] if cfg.sweep_axis == "n_antennas" else []))
    ports = 2 * n_max if "dual_2x" in cfg.baselines else n_max
    _check(s.L >= ports, f"codeword length L={s.L} is shorter than the {ports} transmit ports", "scene.L")
    _check(s.K >= 0, "user count must be nonnegative", "scene.K")
    _check(s.n_paths >= 1, "n_paths must be positive", "scene.n_paths")
    _check(0 <= s.chi_ant <= 1, "chi_ant must lie in [0, 1]", "scene.chi_ant")
    _check(0 <= s.chi_user <= 1, "chi_user must lie in [0, 1]", "scene.chi_user")
    _check(s.target_cov in (None, "estimation", "detection"), "target_cov must be estimation or detection",
           "scene.target_cov")
    _check(s.clutter_cov_scale >= 0, "clutter_cov_scale must be nonnegative", "scene.clutter_cov_scale")
    _check(s.spacing > 0, "spacing must be positive", "scene.spacing")
    for name in ("rho_t_dbm", "sigma_s2_dbm", "sigma_c2_dbm", "target_var_dbm", "clutter_var_dbm", "gamma_th_db",
                 "channel_gain_db", "target_angle_deg", "angle_spread_deg"):
        _check(_finite(getattr(s, name)), f"{name} must be finite", "scene." + name)
    _check(all(_finite(a) for a in s.clutter_angles_deg), "clutter angles must be finite", "scene.clutter_angles_deg")
