"""Sampling-based MPC with GP-corrected rollouts and chance-constraint tightening.

Each tick: draw control perturbations, roll every perturbed sequence through
the motion model (means only), score the rollouts, soft-min the scores into
weights and move the nominal sequence by the weighted perturbation. After the
first control is taken the sequence is shifted, the belief is propagated along
it to tighten next tick's lane/obstacle thresholds, and (once a measurement
arrives) the terrain weights are refit.

Rollouts run in fixed-size sample chunks, optionally on a thread pool. The
chunking does not depend on the worker count and all random draws happen on
the calling thread, so results are bit-identical for any number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import OMEGA, V, BeliefState, Control, ControlSequence, GaussianCorrection, RobotState, TerrainWeights
from .costs import (DEFAULT_HIGH_COST, AvoidanceWeights, CircleObstacle, GoalSpec, Track, TrackingWeights,
                    avoidance_cost_batch, tracking_cost_batch)
from .dynamics import Edd5Params, NominalParams, edd5_step_batch, nominal_step_batch, unicycle_step_batch
from .gp import EnsembleEvaluator, GpModel, ensemble_combine, per_terrain_predictions
from .terrain import HistoryBuffer, WeightSolverConfig, per_terrain_mean_prediction, solve_weights
from .uncertainty import QuantileTables, lane_radii, obstacle_margins, propagate_belief

StepFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class MppiConfig:
    samples: int = 1024
    horizon: int = 30
    lam: float = 0.1
    sigma_sim: tuple[float, float] = (0.09, 0.25)  # diagonal variances
    u_min: Control = Control(-0.5, -2.0)
    u_max: Control = Control(2.0, 2.0)
    seed: int = 0
    workers: int = 1
    chunk: int = 256
    rollout_dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.samples < 1 or self.horizon < 1 or self.chunk < 1 or self.workers < 1:
            raise ValueError("samples, horizon, chunk and workers must be >= 1")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if len(self.sigma_sim) != 2 or min(self.sigma_sim) < 0:
            raise ValueError("sigma_sim must be two non-negative variances")
        if self.u_min.v_ref > self.u_max.v_ref or self.u_min.omega_ref > self.u_max.omega_ref:
            raise ValueError("u_min must not exceed u_max")
        if self.rollout_dtype not in ("float32", "float64"):
            raise ValueError("rollout_dtype must be float32 or float64")

    @property
    def lo(self) -> np.ndarray:
        return self.u_min.as_array()

    @property
    def hi(self) -> np.ndarray:
        return self.u_max.as_array()


# ------------------------------------------------------------ motion models


class MotionModel(Protocol):
    """What the planner needs from a prediction model."""

    uncertain: bool

    def bind(self, weights: TerrainWeights) -> StepFn:
        """Step function ``(states (S,5), controls (S,2)) -> (next (S,5), var (S,2))``."""

    def correction(self, state: np.ndarray, control: np.ndarray, weights: TerrainWeights) -> GaussianCorrection:
        """Exact ensemble correction at one state, for belief propagation."""

    def per_terrain(self, state: RobotState, u: Control) -> np.ndarray | None:
        """Per-terrain next ``(v, omega)`` predictions ``(M, 2)``, or None without terrains."""


class GpResidualModel:
    """Nominal dynamics plus a weighted terrain-ensemble GP residual."""

    uncertain = True

    def __init__(self, gp: GpModel, nominal: NominalParams, dtype: str = "float32"):
        self.gp = gp
        self.nominal = nominal
        self.M = gp.n_outputs // 2
        self._ev = EnsembleEvaluator(gp, dtype=np.dtype(dtype))

    def bind(self, weights: TerrainWeights) -> StepFn:
        ev = self._ev.reweight(weights)
        nominal = self.nominal

        def step(states, controls):
            q = np.empty((states.shape[0], 4))
            q[:, 0] = states[:, V]
            q[:, 1] = states[:, OMEGA]
            q[:, 2:] = controls
            mean, var = ev(q)
            nxt = nominal_step_batch(states, controls, nominal)
            nxt[:, V] += mean[:, 0]
            nxt[:, OMEGA] += mean[:, 1]
            return nxt, var

        return step

    def correction(self, state, control, weights) -> GaussianCorrection:
        query = np.array([state[V], state[OMEGA], control[0], control[1]])
        means, covs = per_terrain_predictions(self.gp, query)
        return ensemble_combine(means, covs, weights)

    def per_terrain(self, state: RobotState, u: Control) -> np.ndarray:
        return per_terrain_mean_prediction(self.gp, state, u, self.nominal)


class Edd5Model:
    uncertain = False

    def __init__(self, params: Edd5Params, track_width: float, dt: float):
        if track_width <= 0:
            raise ValueError("track_width must be positive")
        self.params, self.track_width, self.dt = params, track_width, dt

    def bind(self, weights) -> StepFn:
        def step(states, controls):
            return edd5_step_batch(states, controls, self.params, self.track_width, self.dt), np.zeros((states.shape[0], 2))
        return step

    def correction(self, state, control, weights) -> GaussianCorrection:
        return GaussianCorrection.zero()

    def per_terrain(self, state, u):
        return None


class UnicycleModel:
    uncertain = False

    def __init__(self, dt: float):
        self.dt = dt

    def bind(self, weights) -> StepFn:
        def step(states, controls):
            return unicycle_step_batch(states, controls, self.dt), np.zeros((states.shape[0], 2))
        return step

    def correction(self, state, control, weights) -> GaussianCorrection:
        return GaussianCorrection.zero()

    def per_terrain(self, state, u):
        return None


# -------------------------------------------------------------------- tasks


@dataclass(frozen=True)
class TrackingTask:
    track: Track
    v_desired: float = 2.0
    weights: TrackingWeights = TrackingWeights()

    def cold_thresholds(self, N: int) -> np.ndarray:
        return np.full(N, self.track.half_width)

    def tighten(self, means: np.ndarray, covs: np.ndarray, q: QuantileTables) -> np.ndarray:
        """Tightened lane radii ``r_bar(k)``, shape ``(N,)``."""
        return lane_radii(self.track.half_width, covs[:, :2, :2], q)

    def cost(self, states, traces, controls, thresholds) -> np.ndarray:
        return tracking_cost_batch(states, traces, self.track, thresholds, self.v_desired, controls[..., 0], self.weights)


@dataclass(frozen=True)
class AvoidanceTask:
    obstacles: tuple[CircleObstacle, ...]
    goal: GoalSpec
    weights: AvoidanceWeights = AvoidanceWeights()
    high_cost: float = DEFAULT_HIGH_COST

    def __post_init__(self) -> None:
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def centers(self) -> np.ndarray:
        return np.array([o.center for o in self.obstacles], dtype=float).reshape(-1, 2)

    @property
    def radii(self) -> np.ndarray:
        return np.array([o.radius for o in self.obstacles], dtype=float)

    def cold_thresholds(self, N: int) -> np.ndarray:
        return np.zeros((N, len(self.obstacles)))

    def tighten(self, means: np.ndarray, covs: np.ndarray, q: QuantileTables) -> np.ndarray:
        """Per-step, per-obstacle clearance margins, shape ``(N, O)``."""
        return obstacle_margins(means[:, :2], covs[:, :2, :2], self.centers, q)

    def cost(self, states, traces, controls, thresholds) -> np.ndarray:
        return avoidance_cost_batch(states, traces, self.centers, self.radii, thresholds, self.goal,
                                    self.weights, self.high_cost)


Task = TrackingTask | AvoidanceTask


# ------------------------------------------------------------ MPPI pieces


def tick_rng(seed: int, tick: int) -> np.random.Generator:
    """Independent stream per control tick."""
    return np.random.default_rng(np.random.SeedSequence([seed, tick]))


def sample_perturbations(cfg: MppiConfig, rng: np.random.Generator) -> np.ndarray:
    """``(S, N, 2)`` zero-mean Gaussian draws with diagonal covariance ``sigma_sim``."""
    eps = rng.standard_normal((cfg.samples, cfg.horizon, 2))
    eps *= np.sqrt(np.asarray(cfg.sigma_sim, dtype=float))
    return eps


def rollout_batch(x0: np.ndarray, controls: np.ndarray, step: StepFn) -> tuple[np.ndarray, np.ndarray]:
    """Mean rollouts: states ``(S, N+1, 5)`` and correction variances ``(S, N, 2)``."""
    S, N, _ = controls.shape
    states = np.empty((S, N + 1, 5))
    var = np.empty((S, N, 2))
    states[:, 0] = x0
    for k in range(N):
        states[:, k + 1], var[:, k] = step(states[:, k], controls[:, k])
    return states, var


def rollout(s0: RobotState, seq: ControlSequence, model: MotionModel,
            weights: TerrainWeights) -> tuple[np.ndarray, list[GaussianCorrection]]:
    """One mean rollout using exact (float64) ensemble corrections.

    Returns the ``N + 1`` mean states and the ``N`` corrections applied.
    """
    N = seq.horizon
    states = np.empty((N + 1, 5))
    states[0] = s0.as_array()
    corrs = []
    step = model.bind(weights)
    for k in range(N):
        u = seq.controls[k]
        corr = model.correction(states[k], u, weights)
        if isinstance(model, GpResidualModel):
            nxt = nominal_step_batch(states[k], u, model.nominal)
            nxt[V] += corr.mean[0]
            nxt[OMEGA] += corr.mean[1]
        else:
            nxt = step(states[k][None], u[None])[0][0]
        states[k + 1] = nxt
        corrs.append(corr)
    return states, corrs


def trajectory_weights(costs: np.ndarray, lam: float) -> np.ndarray:
    """Soft-min weights ``exp(-(c - min c) / lambda)``, normalized.

    Non-finite costs get weight 0; if none is finite the weights are uniform.
    """
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not finite.any():
        return np.full(costs.size, 1.0 / costs.size)
    c = np.where(finite, costs, 0.0)
    w = np.where(finite, np.exp(-(c - c[finite].min()) / lam), 0.0)
    return w / w.sum()


def update_controls(nominal: ControlSequence, eps: np.ndarray, w: np.ndarray,
                    u_min: Control, u_max: Control) -> ControlSequence:
    """``clamp(u(k) + sum_s w_s eps_s(k))``, summed in sample order."""
    delta = np.tensordot(w, eps, axes=(0, 0))
    u = np.clip(nominal.controls + delta, u_min.as_array(), u_max.as_array())
    return ControlSequence(u)


def shift_horizon(seq: ControlSequence) -> ControlSequence:
    """Drop the first control and repeat the last."""
    c = seq.controls
    return ControlSequence(np.vstack([c[1:], c[-1:]]))


def propagate_along(x0: np.ndarray, seq: ControlSequence, model: MotionModel, weights: TerrainWeights,
                    nominal: NominalParams) -> tuple[np.ndarray, np.ndarray]:
    """Belief means ``(N, 5)`` and covariances ``(N, 5, 5)`` after each control, from a certain start."""
    b = BeliefState.certain(x0)
    N = seq.horizon
    means = np.empty((N, 5))
    covs = np.empty((N, 5, 5))
    for k in range(N):
        u = seq[k]
        corr = model.correction(b.mean, u.as_array(), weights)
        b = propagate_belief(b, u, corr, nominal)
        means[k], covs[k] = b.mean, b.cov
    return means, covs


# ------------------------------------------------------------------ planner


@dataclass
class PlannerState:
    nominal_sequence: ControlSequence
    prev_weights: TerrainWeights
    prev_covariances: np.ndarray  # (N, 5, 5) from the last tightening pass
    thresholds: np.ndarray
    history: HistoryBuffer
    tick: int = 0


@dataclass(frozen=True)
class Diagnostics:
    tick: int
    best_cost: float
    mean_cost: float
    ess: float
    entropy: float
    nonfinite: int
    weights: tuple[float, ...]
    min_threshold: float


@dataclass
class Planner:
    """Receding-horizon controller; owns the planner state between ticks."""

    cfg: MppiConfig
    model: MotionModel
    task: Task
    nominal: NominalParams
    quantiles: QuantileTables = field(default_factory=lambda: QuantileTables.for_probability(0.95))
    solver: WeightSolverConfig = WeightSolverConfig()
    history_size: int = 20
    n_terrains: int = 1
    initial_weights: TerrainWeights | None = None
    state: PlannerState = field(init=False)

    def __post_init__(self) -> None:
        N = self.cfg.horizon
        M = getattr(self.model, "M", self.n_terrains)
        self.n_terrains = M
        w0 = self.initial_weights or TerrainWeights.uniform(M)
        start = ControlSequence.constant(Control(0.0, 0.0), N).clamped(self.cfg.u_min, self.cfg.u_max)
        self.state = PlannerState(start, w0, np.zeros((N, 5, 5)), self.task.cold_thresholds(N),
                                  HistoryBuffer(self.history_size, M))
        self._pool = ThreadPoolExecutor(self.cfg.workers) if self.cfg.workers > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self) -> "Planner":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def weights(self) -> TerrainWeights:
        return self.state.prev_weights

    def _score(self, x0: np.ndarray, controls: np.ndarray, step: StepFn) -> np.ndarray:
        S = controls.shape[0]
        edges = list(range(0, S, self.cfg.chunk)) + [S]
        thresholds = self.state.thresholds

        def work(i):
            u = controls[edges[i]:edges[i + 1]]
            states, var = rollout_batch(x0, u, step)
            return self.task.cost(states, var.sum(-1), u, thresholds)

        idx = range(len(edges) - 1)
        parts = list(self._pool.map(work, idx)) if self._pool else [work(i) for i in idx]
        return np.concatenate(parts)

    def plan_step(self, x0: RobotState) -> tuple[Control, Diagnostics]:
        cfg, st = self.cfg, self.state
        x = x0.as_array()
        rng = tick_rng(cfg.seed, st.tick)
        eps = sample_perturbations(cfg, rng)
        controls = np.clip(st.nominal_sequence.controls + eps, cfg.lo, cfg.hi)
        eps_eff = controls - st.nominal_sequence.controls
        step = self.model.bind(st.prev_weights)
        costs = self._score(x, controls, step)

        w = trajectory_weights(costs, cfg.lam)
        seq = update_controls(st.nominal_sequence, eps_eff, w, cfg.u_min, cfg.u_max)
        u0 = seq[0]
        finite = np.isfinite(costs)
        nz = w[w > 0]
        diag = Diagnostics(
            tick=st.tick,
            best_cost=float(costs[finite].min()) if finite.any() else math.inf,
            mean_cost=float(costs[finite].mean()) if finite.any() else math.inf,
            ess=float(1.0 / (w @ w)),
            entropy=float(-(nz * np.log(nz)).sum()),
            nonfinite=int((~finite).sum()),
            weights=tuple(float(v) for v in st.prev_weights.w),
            min_threshold=float(np.min(st.thresholds)) if st.thresholds.size else math.nan,
        )

        shifted = shift_horizon(seq)
        x_next = step(x[None], u0.as_array()[None])[0][0]
        self._tighten(x_next, shifted)
        st.nominal_sequence = shifted
        st.tick += 1
        return u0, diag

    def _tighten(self, x_next: np.ndarray, seq: ControlSequence) -> None:
        st = self.state
        N = seq.horizon
        if not self.model.uncertain:
            st.prev_covariances = np.zeros((N, 5, 5))
            st.thresholds = self.task.cold_thresholds(N)
            return
        means, covs = propagate_along(x_next, seq, self.model, st.prev_weights, self.nominal)
        st.prev_covariances = covs
        st.thresholds = self.task.tighten(means, covs, self.quantiles)

    def observe(self, prev: RobotState, u: Control, measured: RobotState) -> TerrainWeights:
        """Record a measured transition and refit the terrain weights."""
        st = self.state
        pred = self.model.per_terrain(prev, u)
        if pred is None:
            return st.prev_weights
        st.history = st.history.push((measured.v, measured.omega), pred)
        st.prev_weights = solve_weights(st.history, st.prev_weights, self.solver)
        return st.prev_weights


def plan_step(planner: Planner, x0: RobotState) -> tuple[Control, Diagnostics]:
    return planner.plan_step(x0)


def tightening_pass(planner: Planner, x0: RobotState) -> np.ndarray:
    """Thresholds along the planner's current nominal sequence starting at ``x0``."""
    planner._tighten(x0.as_array(), planner.state.nominal_sequence)
    return planner.state.thresholds
