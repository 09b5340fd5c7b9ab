"""Experiment configuration: one TOML file, one section per module.

Every key has a default, so an empty file is a valid configuration. Unknown
sections or keys raise :class:`ConfigError` so a typo cannot silently fall
back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..core import Control
from ..costs import AvoidanceWeights, TrackingWeights
from ..dynamics import DEFAULT_TERRAINS, NominalParams, TerrainProfile
from ..mppi import MppiConfig
from ..terrain import WeightSolverConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PLANNERS = ("gp", "edd5", "unicycle")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class GpSection:
    n_points: int = 300
    train_seed: int = 0
    shared_kernels: bool = True


@dataclass(frozen=True)
class Edd5Section:
    track_width: float = 0.43


@dataclass(frozen=True)
class SolverSection:
    history: int = 20
    gamma: float = 1e-3
    max_iters: int = 200
    tol: float = 1e-8

    def solver(self) -> WeightSolverConfig:
        return WeightSolverConfig(self.gamma, self.max_iters, self.tol)


@dataclass(frozen=True)
class CostSection:
    alpha: tuple[float, ...] = TrackingWeights().as_tuple()
    beta: tuple[float, ...] = AvoidanceWeights().as_tuple()
    high_cost: float = 1e4
    p_x: float = 0.95

    def tracking(self) -> TrackingWeights:
        return TrackingWeights(*self.alpha)

    def avoidance(self) -> AvoidanceWeights:
        return AvoidanceWeights(*self.beta)


@dataclass(frozen=True)
class TrackingSection:
    shape: str = "circle"
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 4.0
    side: float = 8.0
    half_width: float = 0.5
    v_desired: float = 2.0
    distance: float = 100.0
    max_time: float = 120.0
    schedule: tuple[tuple[float, int], ...] = ((0.0, 0),)


@dataclass(frozen=True)
class AvoidanceSection:
    start: tuple[float, float] = (0.0, 0.0)
    goal: tuple[float, float] = (10.0, 0.0)
    capture_radius: float = 0.5
    max_obstacles: int = 5
    radius_range: tuple[float, float] = (0.3, 0.7)
    bounds: tuple[float, float, float, float] = (0.0, 10.0, -2.5, 2.5)  # x_min, x_max, y_min, y_max
    min_gap: float = 0.5
    timeout: float = 15.0
    v_desired: float = 2.0
    terrain: int = 0


@dataclass(frozen=True)
class BenchSection:
    planners: tuple[str, ...] = ("edd5", "unicycle", "gp")
    terrains: tuple[int, ...] = (0, 1, 2)
    tracks: tuple[str, ...] = ("circle", "square")
    tracking_seeds: tuple[int, ...] = (0,)
    avoidance_trials: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    nominal: NominalParams = NominalParams()
    terrains: tuple[TerrainProfile, ...] = DEFAULT_TERRAINS
    gp: GpSection = GpSection()
    edd5: Edd5Section = Edd5Section()
    solver: SolverSection = SolverSection()
    mppi: MppiConfig = MppiConfig()
    costs: CostSection = CostSection()
    tracking: TrackingSection = TrackingSection()
    avoidance: AvoidanceSection = AvoidanceSection()
    bench: BenchSection = BenchSection()
    planner: str = "gp"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.planner not in PLANNERS:
            raise ConfigError(f"unknown planner {self.planner!r}; expected one of {PLANNERS}")
        M = len(self.terrains)
        if M < 1:
            raise ConfigError("at least one terrain profile is required")
        idx = [i for _, i in self.tracking.schedule] + [self.avoidance.terrain, *self.bench.terrains]
        if any(not (0 <= i < M) for i in idx):
            raise ConfigError(f"terrain index out of range for {M} terrains")
        times = [t for t, _ in self.tracking.schedule]
        if not times or times[0] != 0.0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("tracking schedule must start at 0 and have strictly increasing times")
        if self.tracking.shape not in ("circle", "square") or any(s not in ("circle", "square") for s in self.bench.tracks):
            raise ConfigError("track shape must be 'circle' or 'square'")
        if any(p not in PLANNERS for p in self.bench.planners):
            raise ConfigError(f"bench planners must be among {PLANNERS}")
        if not (0.5 < self.costs.p_x < 1.0):
            raise ConfigError("p_x must lie in (0.5, 1)")
        if not (0 <= self.avoidance.max_obstacles <= 5):
            raise ConfigError("max_obstacles must lie in [0, 5]")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_section(self, name: str, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **{name: dataclasses.replace(getattr(self, name), **changes)})

    def digest(self) -> str:
        """Hash of every setting that can change results (worker count excluded)."""
        d = to_dict(self)
        d["mppi"].pop("workers", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ------------------------------------------------------------- conversion


def _plain(v: Any) -> Any:
    if isinstance(v, Control):
        return [v.v_ref, v.omega_ref]
    if dataclasses.is_dataclass(v):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    return v


def to_dict(cfg: ExperimentConfig) -> dict:
    d = _plain(cfg)
    d["mppi"]["lambda"] = d["mppi"].pop("lam")
    return d


def _tuplify(v: Any) -> Any:
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def _build(cls, values: dict, where: str, converters: dict | None = None):
    if not isinstance(values, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kw = {}
    for k, v in values.items():
        v = _tuplify(v)
        if converters and k in converters:
            v = converters[k](v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    sections = {f.name for f in dataclasses.fields(ExperimentConfig)}
    aliases = {"terrain": "terrains"}
    for a, b in aliases.items():
        if a in data:
            data[b] = data.pop(a)
    unknown = sorted(set(data) - sections)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    kw: dict[str, Any] = {}
    simple = {"nominal": NominalParams, "gp": GpSection, "edd5": Edd5Section, "solver": SolverSection,
              "costs": CostSection, "tracking": TrackingSection, "avoidance": AvoidanceSection,
              "bench": BenchSection}
    for name, cls in simple.items():
        if name in data:
            kw[name] = _build(cls, data[name], name)
    if "terrains" in data:
        rows = data["terrains"]
        if not isinstance(rows, list):
            raise ConfigError("[[terrain]] must be an array of tables")
        kw["terrains"] = tuple(_build(TerrainProfile, r, f"terrain {i}") for i, r in enumerate(rows))
    if "mppi" in data:
        m = dict(data["mppi"]) if isinstance(data["mppi"], dict) else data["mppi"]
        if isinstance(m, dict) and "lambda" in m:
            m["lam"] = m.pop("lambda")
        to_control = lambda v: Control(*v)
        kw["mppi"] = _build(MppiConfig, m, "mppi", {"u_min": to_control, "u_max": to_control})
    for k in ("planner", "seed"):
        if k in data:
            kw[k] = data[k]
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    """Read a TOML config; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return from_dict(data)
