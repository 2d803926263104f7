"""Experiment configuration: YAML in, validated dataclasses out.

Validation collects every problem with its field path instead of stopping
at the first one, so ``openq validate`` can list them all.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

EXPERIMENTS = (
    "magnetization-sweep", "mixing-time", "correlation-sweep", "bond-dimension-study", "entropy-vs-time",
    "trajectory-vs-oracle", "time-dependent-protocols", "chaotic-regime", "complexity-report",
)
ENGINES = ("oracle", "trajectory", "tensor-network")
REQUIRED_ENGINE = {
    "bond-dimension-study": ("tensor-network",),
    "entropy-vs-time": ("tensor-network",),
    "mixing-time": ("tensor-network", "oracle"),
    "correlation-sweep": ("tensor-network", "oracle"),
    "chaotic-regime": ("tensor-network", "oracle"),
    "trajectory-vs-oracle": ("trajectory",),
}
INITIAL_STATES = ("zeros", "ones", "neel", "plus", "mixed")


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass
class ScheduleConfig:
    kind: str = "constant"
    gamma_max: float | None = None
    t_total: float | None = None
    seed: int | None = None
    n_jump_sites: int = 2


@dataclass
class ModelConfig:
    n_sites: int = 3
    J: float = 1.0
    h_x: float = -2.0
    h_z: float = -2.0
    mu: float = 0.5
    gamma: float = 0.1
    eta: float | list[float] = 0.0
    initial: str = "zeros"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)


@dataclass
class EngineConfig:
    kind: str = "oracle"
    dt: float = 0.01
    chi_max: int = 64
    svd_cutoff: float = 1e-10
    ordering: str = "sweep"
    svd_method: str = "svd"
    adaptive: bool = False
    weight_ceiling: float = 1e-8
    sample_every: int = 10
    trajectories: int = 1000
    weighting: str = "survival"


@dataclass
class GridConfig:
    gamma: list[float] = field(default_factory=list)
    chi: list[int] = field(default_factory=list)
    n_sites: list[int] = field(default_factory=list)
    t: list[float] = field(default_factory=list)
    eta: list[float] = field(default_factory=list)


@dataclass
class ExperimentConfig:
    experiment: str
    model: ModelConfig = field(default_factory=ModelConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    grids: GridConfig = field(default_factory=GridConfig)
    params: dict[str, Any] = field(default_factory=dict)
    output: str = "out"
    seed: int = 0

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("output")
        return d

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form; independent of key order, formatting and output path."""
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=float)
        return hashlib.sha256(blob.encode()).hexdigest()


ALIASES = {("model", "N"): "n_sites", ("grids", "N"): "n_sites"}


def _coerce(value, default, path, diags):
    """Convert ``value`` to the type of ``default``; YAML reads ``1e-4`` as a string."""
    if default is None or isinstance(default, dict):
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise TypeError
            return int(float(value))
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        diags.append(f"{path}: expected {type(default).__name__}, got {value!r}")
        return default
    return value


def _build(cls, data, path, diags):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        diags.append(f"{path}: expected a mapping")
        return cls()
    obj = cls()
    for key, value in data.items():
        key = ALIASES.get((path, key), key)
        if not hasattr(obj, key):
            diags.append(f"{path}.{key}: unknown field")
            continue
        default = getattr(obj, key)
        if key == "eta" and path == "model" and isinstance(value, list):
            value = [_coerce(v, 0.0, f"{path}.eta[{i}]", diags) for i, v in enumerate(value)]
        elif key == "schedule":
            value = _build(ScheduleConfig, value, f"{path}.schedule", diags)
        elif isinstance(default, list):
            if not isinstance(value, list):
                value = [value]
            value = [_coerce(v, 0 if key in ("chi", "n_sites") else 0.0, f"{path}.{key}[{i}]", diags)
                     for i, v in enumerate(value)]
        elif key in ("gamma_max", "t_total") and value is not None:
            value = _coerce(value, 0.0, f"{path}.{key}", diags)
        elif key == "seed" and value is not None:
            value = _coerce(value, 0, f"{path}.{key}", diags)
        else:
            value = _coerce(value, default, f"{path}.{key}", diags)
        setattr(obj, key, value)
    return obj


def parse_config(data: dict) -> tuple[ExperimentConfig | None, list[str]]:
    diags: list[str] = []
    if not isinstance(data, dict):
        return None, ["<root>: expected a mapping"]
    kind = data.get("experiment")
    if kind not in EXPERIMENTS:
        diags.append(f"experiment: must be one of {', '.join(EXPERIMENTS)}, got {kind!r}")
    known = {"experiment", "model", "engine", "grids", "params", "output", "seed"}
    for key in data:
        if key not in known:
            diags.append(f"{key}: unknown field")
    cfg = ExperimentConfig(
        experiment=kind if kind in EXPERIMENTS else "complexity-report",
        model=_build(ModelConfig, data.get("model"), "model", diags),
        engine=_build(EngineConfig, data.get("engine"), "engine", diags),
        grids=_build(GridConfig, data.get("grids"), "grids", diags),
        params=data.get("params") or {},
        output=str(data.get("output", "out")),
        seed=_coerce(data.get("seed", 0), 0, "seed", diags),
    )
    if not isinstance(cfg.params, dict):
        diags.append("params: expected a mapping")
        cfg.params = {}
    diags.extend(validate_config(cfg))
    return cfg, diags


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Semantic checks; returns human-readable diagnostics with field paths."""
    d: list[str] = []
    m, e, g = cfg.model, cfg.engine, cfg.grids
    if m.n_sites < 1:
        d.append("model.n_sites: must be >= 1")
    if m.n_sites < 2 and cfg.experiment != "complexity-report":
        d.append("model.n_sites: the boundary-driven chain needs at least 2 sites")
    if not (math.isfinite(m.gamma) and m.gamma >= 0):
        d.append("model.gamma: must be finite and >= 0")
    model_etas = m.eta if isinstance(m.eta, list) else [m.eta]
    if isinstance(m.eta, list) and len(m.eta) != 4:
        d.append(f"model.eta: per-channel form needs 4 values, got {len(m.eta)}")
    for i, v in enumerate(model_etas):
        if not 0 <= v <= 1:
            where = f"model.eta[{i}]" if isinstance(m.eta, list) else "model.eta"
            d.append(f"{where}: must lie in [0, 1], got {v}")
    if abs(m.mu) > 1:
        d.append(f"model.mu: |mu| <= 1 required for nonnegative rates, got {m.mu}")
    if m.initial not in INITIAL_STATES:
        d.append(f"model.initial: must be one of {', '.join(INITIAL_STATES)}")
    s = m.schedule
    if s.kind not in ("constant", "sinusoidal", "random-sites"):
        d.append("model.schedule.kind: must be constant, sinusoidal or random-sites")
    if s.kind == "sinusoidal" and (s.gamma_max is None or s.t_total is None):
        d.append("model.schedule: sinusoidal needs gamma_max and t_total")
    if s.kind == "random-sites" and s.seed is None:
        d.append("model.schedule.seed: random-sites protocol requires an explicit seed")
    if e.kind not in ENGINES:
        d.append(f"engine.kind: must be one of {', '.join(ENGINES)}")
    if not e.dt > 0:
        d.append("engine.dt: must be > 0")
    if e.chi_max < 1:
        d.append("engine.chi_max: must be >= 1")
    if e.sample_every < 1:
        d.append("engine.sample_every: must be >= 1")
    if e.trajectories < 2:
        d.append("engine.trajectories: need at least 2")
    if e.ordering not in ("sweep", "brick"):
        d.append("engine.ordering: must be sweep or brick")
    if e.svd_method not in ("svd", "gram"):
        d.append("engine.svd_method: must be svd or gram")
    if e.weighting not in ("survival", "none"):
        d.append("engine.weighting: must be survival or none")
    allowed = REQUIRED_ENGINE.get(cfg.experiment)
    if allowed and e.kind not in allowed:
        d.append(f"engine.kind: {cfg.experiment} requires {' or '.join(allowed)}")
    etas = g.eta or model_etas
    if e.kind == "tensor-network" and any(x > 0 for x in etas):
        d.append("model.eta: the tensor-network engine supports only linear dynamics (eta = 0)")
    if e.kind == "oracle" and m.n_sites > 10:
        d.append("model.n_sites: the exact oracle is limited to N <= 10")
    for name, values in (("gamma", g.gamma), ("t", g.t)):
        for i, v in enumerate(values):
            if not (math.isfinite(v) and v >= 0):
                d.append(f"grids.{name}[{i}]: must be finite and >= 0")
    for i, v in enumerate(g.eta):
        if not 0 <= v <= 1:
            d.append(f"grids.eta[{i}]: must lie in [0, 1], got {v}")
    for i, v in enumerate(g.chi):
        if v < 1:
            d.append(f"grids.chi[{i}]: must be >= 1")
    if g.chi and g.chi != sorted(g.chi):
        d.append("grids.chi: must be ascending")
    needs = {"magnetization-sweep": "gamma", "mixing-time": "gamma", "correlation-sweep": "gamma",
             "chaotic-regime": "gamma", "entropy-vs-time": "gamma", "bond-dimension-study": "chi",
             "trajectory-vs-oracle": "gamma"}
    key = needs.get(cfg.experiment)
    if key and not getattr(g, key):
        d.append(f"grids.{key}: must be nonempty for {cfg.experiment}")
    if cfg.experiment == "bond-dimension-study" and not g.t:
        d.append("grids.t: must be nonempty for bond-dimension-study")
    if cfg.experiment != "complexity-report":
        T = cfg.params.get("T")
        if T is None and cfg.experiment != "bond-dimension-study":
            d.append("params.T: required")
        elif T is not None:
            try:
                if not float(T) > 0:
                    d.append("params.T: must be > 0")
            except (TypeError, ValueError):
                d.append(f"params.T: expected a number, got {T!r}")
    return d


class _LineLoader(yaml.SafeLoader):
    pass


def load_config(path) -> tuple[ExperimentConfig | None, list[str]]:
    """Parse a YAML file; parse errors are reported with line and column."""
    text = Path(path).read_text()
    try:
        data = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        return None, [f"parse error at {where}: {exc.problem}"]
    return parse_config(data)
