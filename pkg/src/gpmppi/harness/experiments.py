"""Closed-loop experiments on the synthetic terrain simulator.

A run is a pure function of ``(config, scenario, seed)``: the model training
data, MPPI perturbations and simulator noise all come from streams derived
from fixed seeds.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..core import Control, RobotState, TerrainWeights
from ..costs import CircleObstacle, GoalSpec, Track
from ..dynamics import Edd5Params, fit_edd5, generate_shared_training_data, generate_training_data, step_true_terrain
from ..gp import GpModel, fit_auto
from ..mppi import AvoidanceTask, Edd5Model, GpResidualModel, Planner, TrackingTask, UnicycleModel
from ..uncertainty import QuantileTables
from .config import ExperimentConfig, GpSection

MAX_PLACEMENT_ATTEMPTS = 10_000


class ScenarioError(RuntimeError):
    """A scenario could not be generated."""


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class Scenario:
    kind: str  # "tracking" | "avoidance"
    start: tuple[float, float, float]
    track: Track | None = None
    obstacles: tuple[CircleObstacle, ...] = ()
    goal: GoalSpec | None = None
    schedule: tuple[tuple[float, int], ...] = ((0.0, 0),)
    distance_budget: float | None = None
    duration: float = 60.0
    v_desired: float = 2.0
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("tracking", "avoidance"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "tracking" and self.track is None:
            raise ValueError("tracking scenarios need a track")
        if self.kind == "avoidance" and self.goal is None:
            raise ValueError("avoidance scenarios need a goal")
        times = [t for t, _ in self.schedule]
        if not times or times[0] != 0.0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must start at 0 and strictly increase")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def terrain_at_tick(self, tick: int, dt: float) -> int:
        """Terrain index in force at ``tick``; a switch at time ``t`` lands on tick ``round(t / dt)``."""
        current = self.schedule[0][1]
        for t, idx in self.schedule:
            if round(t / dt) <= tick:
                current = idx
        return current


def tracking_scenario(cfg: ExperimentConfig, shape: str | None = None, schedule=None) -> Scenario:
    tc = cfg.tracking
    shape = shape or tc.shape
    if shape == "circle":
        track = Track.circle(tc.center, tc.radius, tc.half_width)
    else:
        track = Track.square(tc.center, tc.side, tc.half_width)
    return Scenario("tracking", track.start_pose(), track=track, schedule=tuple(schedule or tc.schedule),
                    distance_budget=tc.distance, duration=tc.max_time, v_desired=tc.v_desired, name=shape)


def random_obstacle_field(rng: np.random.Generator, count: int, bounds, start, goal, min_gap: float,
                          radius_range=(0.3, 0.7), capture_radius: float = 0.5) -> list[CircleObstacle]:
    """Place ``count`` circles in ``bounds`` clear of the start and goal discs.

    Each center keeps at least ``radius + capture_radius + min_gap`` from both
    the start and the goal.
    """
    if not (0 <= count <= 5):
        raise ValueError("count must lie in [0, 5]")
    x0, x1, y0, y1 = bounds
    for p in (start, goal):
        if not (x0 <= p[0] <= x1 and y0 <= p[1] <= y1):
            raise ValueError(f"bounds {bounds} must contain start and goal")
    out: list[CircleObstacle] = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise ScenarioError(f"could not place {count} obstacles in {MAX_PLACEMENT_ATTEMPTS} attempts")
        c = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
        r = float(rng.uniform(*radius_range))
        need = r + capture_radius + min_gap
        if math.dist(c, start) >= need and math.dist(c, goal) >= need:
            out.append(CircleObstacle(c, r))
    return out


def avoidance_scenario(cfg: ExperimentConfig, seed: int, terrain: int | None = None,
                       count: int | None = None) -> Scenario:
    """Random field for trial ``seed``; the obstacle count is drawn from 1..max unless given."""
    ac = cfg.avoidance
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    n = int(rng.integers(1, ac.max_obstacles + 1)) if count is None and ac.max_obstacles > 0 else (count or 0)
    obstacles = random_obstacle_field(rng, n, ac.bounds, ac.start, ac.goal, ac.min_gap, ac.radius_range,
                                      ac.capture_radius)
    heading = math.atan2(ac.goal[1] - ac.start[1], ac.goal[0] - ac.start[0])
    t = ac.terrain if terrain is None else terrain
    return Scenario("avoidance", (ac.start[0], ac.start[1], heading), obstacles=tuple(obstacles),
                    goal=GoalSpec(ac.goal, ac.capture_radius), schedule=((0.0, t),), duration=ac.timeout,
                    v_desired=ac.v_desired, name="avoid")


# ------------------------------------------------------------------- models


@dataclass(frozen=True)
class TrainedModels:
    gp: GpModel
    edd5: Edd5Params
    track_width: float


@lru_cache(maxsize=8)
def _train(terrains, nominal, gp_cfg: GpSection, track_width: float) -> TrainedModels:
    rng = np.random.default_rng(np.random.SeedSequence([gp_cfg.train_seed, 1]))
    X, Y = generate_shared_training_data(terrains, nominal, gp_cfg.n_points, rng)
    gp = fit_auto(X, Y, shared=gp_cfg.shared_kernels)
    cmds, vel = [], []
    for prof in terrains:
        d = generate_training_data(prof, nominal, gp_cfg.n_points, rng)
        cmds.append(d.inputs[:, 2:4])
        vel.append(d.next_velocities)
    cmds, vel = np.concatenate(cmds), np.concatenate(vel)
    body = np.column_stack([vel[:, 0], np.zeros(len(vel)), vel[:, 1]])
    return TrainedModels(gp, fit_edd5(cmds, body, track_width), track_width)


def train_models(cfg: ExperimentConfig) -> TrainedModels:
    """Fit the terrain GP ensemble and the pooled EDD5 baseline (cached per config)."""
    return _train(tuple(cfg.terrains), cfg.nominal, cfg.gp, cfg.edd5.track_width)


def build_planner(cfg: ExperimentConfig, scenario: Scenario, models: TrainedModels, seed: int,
                  planner: str | None = None) -> Planner:
    kind = planner or cfg.planner
    dt = cfg.nominal.dt
    if kind == "gp":
        model = GpResidualModel(models.gp, cfg.nominal, cfg.mppi.rollout_dtype)
    elif kind == "edd5":
        model = Edd5Model(models.edd5, models.track_width, dt)
    elif kind == "unicycle":
        model = UnicycleModel(dt)
    else:
        raise ValueError(f"unknown planner {kind!r}")
    if scenario.kind == "tracking":
        task = TrackingTask(scenario.track, scenario.v_desired, cfg.costs.tracking())
    else:
        task = AvoidanceTask(scenario.obstacles, scenario.goal, cfg.costs.avoidance(), cfg.costs.high_cost)
    mppi_seed = int(np.random.SeedSequence([cfg.mppi.seed, seed, 3]).generate_state(1)[0])
    mcfg = dataclasses.replace(cfg.mppi, seed=mppi_seed)
    return Planner(mcfg, model, task, cfg.nominal, QuantileTables.for_probability(cfg.costs.p_x),
                   cfg.solver.solver(), cfg.solver.history, n_terrains=len(cfg.terrains))


# ------------------------------------------------------------------ metrics


@dataclass
class RunMetrics:
    planner: str
    scenario: str
    terrain: int
    seed: int
    rmse: float = math.nan
    success: bool = False
    time_to_goal: float = math.nan
    min_obstacle_clearance: float = math.inf
    mean_speed: float = 0.0
    collision_count: int = 0
    lane_keeping: float = math.nan
    distance: float = 0.0
    ticks: int = 0
    status: str = "ok"
    latency_ms_median: float = math.nan
    latency_ms_p95: float = math.nan


@dataclass(frozen=True)
class TickRecord:
    tick: int
    t: float
    state: RobotState
    command: Control
    terrain: int
    weights: tuple[float, ...]
    best_cost: float
    ess: float
    min_threshold: float


def compute_rmse(path, track: Track) -> float:
    """Root-mean-square centerline distance of a path of 2-D points."""
    pts = np.asarray(path, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("path must be non-empty")
    d = track.centerline_distance(pts)
    return float(np.sqrt(np.mean(d * d)))


def _simulate(cfg: ExperimentConfig, scenario: Scenario, seed: int, planner_kind: str,
              models: TrainedModels | None, trace: list | None) -> RunMetrics:
    models = models or train_models(cfg)
    dt = cfg.nominal.dt
    planner = build_planner(cfg, scenario, models, seed, planner_kind)
    truth_rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    x = RobotState(*scenario.start, 0.0, 0.0)
    m = RunMetrics(planner_kind, scenario.name, scenario.terrain_at_tick(0, dt), seed)
    path = [x.xy]
    speeds, latencies = [], []
    inside = []
    max_ticks = int(round(scenario.duration / dt))
    centers = np.array([o.center for o in scenario.obstacles]).reshape(-1, 2)
    radii = np.array([o.radius for o in scenario.obstacles])
    was_colliding = False
    with planner:
        for tick in range(max_ticks):
            terrain = scenario.terrain_at_tick(tick, dt)
            t0 = time.perf_counter()
            u, diag = planner.plan_step(x)
            latencies.append(time.perf_counter() - t0)
            try:
                x_new = step_true_terrain(x, u, cfg.terrains[terrain], truth_rng, dt)
            except ValueError:
                m.status = "aborted: non-finite state"
                break
            planner.observe(x, u, x_new)
            step_len = math.hypot(x_new.X - x.X, x_new.Y - x.Y)
            m.distance += step_len
            x = x_new
            path.append(x.xy)
            speeds.append(abs(x.v))
            m.ticks = tick + 1
            if trace is not None:
                trace.append(TickRecord(tick, (tick + 1) * dt, x, u, terrain, tuple(planner.weights.w),
                                        diag.best_cost, diag.ess, diag.min_threshold))
            if scenario.kind == "tracking":
                inside.append(float(scenario.track.centerline_distance(x.xy)) <= scenario.track.half_width)
                if m.distance >= scenario.distance_budget:
                    break
            else:
                if centers.shape[0]:
                    clearance = np.hypot(*(x.xy - centers).T) - radii
                    m.min_obstacle_clearance = min(m.min_obstacle_clearance, float(clearance.min()))
                    colliding = bool((clearance <= 0.0).any())
                    if colliding and not was_colliding:
                        m.collision_count += 1
                    was_colliding = colliding
                if math.dist(x.xy, scenario.goal.position) <= scenario.goal.capture_radius:
                    m.success = m.collision_count == 0
                    if m.success:
                        m.time_to_goal = m.ticks * dt
                    break
        else:
            if scenario.kind == "avoidance":
                m.status = "timeout"
    if scenario.kind == "tracking":
        m.rmse = compute_rmse(path[1:] if len(path) > 1 else path, scenario.track)
        m.lane_keeping = float(np.mean(inside)) if inside else math.nan
        m.success = m.status == "ok" and m.distance >= scenario.distance_budget
    m.mean_speed = float(np.mean(speeds)) if speeds else 0.0
    if latencies:
        lat = np.array(latencies) * 1e3
        m.latency_ms_median = float(np.median(lat))
        m.latency_ms_p95 = float(np.percentile(lat, 95))
    return m


def run_tracking_experiment(cfg: ExperimentConfig, scenario: Scenario, *, seed: int | None = None,
                            planner: str | None = None, models: TrainedModels | None = None,
                            trace: list | None = None) -> RunMetrics:
    """Closed-loop lane tracking until the distance budget (or time limit) is used up."""
    if scenario.kind != "tracking":
        raise ValueError("scenario is not a tracking scenario")
    return _simulate(cfg, scenario, cfg.seed if seed is None else seed, planner or cfg.planner, models, trace)


def run_avoidance_experiment(cfg: ExperimentConfig, scenario: Scenario, *, seed: int | None = None,
                             planner: str | None = None, models: TrainedModels | None = None,
                             trace: list | None = None) -> RunMetrics:
    """Closed-loop run to the goal; success means capture with no physical collision."""
    if scenario.kind != "avoidance":
        raise ValueError("scenario is not an avoidance scenario")
    return _simulate(cfg, scenario, cfg.seed if seed is None else seed, planner or cfg.planner, models, trace)
