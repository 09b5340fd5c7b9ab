"""Motion models: nominal dynamic unicycle, kinematic baselines, synthetic truth.

All single-step functions have an array twin (``*_batch``) operating on
``(..., 5)`` states and ``(..., 2)`` controls; the rollout engine uses the
array forms and the tests check both against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import OMEGA, THETA, V, X, Y, Control, RobotState, wrap_angles

SMALL_OMEGA = 1e-6
DEFAULT_DT = 0.05


class DegenerateIcrError(ValueError):
    """Raised when the EDD5 ICR pair collapses onto one line."""


@dataclass(frozen=True)
class NominalParams:
    """First-order velocity lag toward the commanded velocities."""

    tau_v: float = 0.5
    tau_omega: float = 0.35
    dt: float = DEFAULT_DT

    def __post_init__(self) -> None:
        if not (self.tau_v > 0 and self.tau_omega > 0):
            raise ValueError("time constants must be positive")
        if not (0 < self.dt < min(self.tau_v, self.tau_omega)):
            raise ValueError("need 0 < dt < min(tau_v, tau_omega) for a stable lag")

    @property
    def kv(self) -> float:
        return self.dt / self.tau_v

    @property
    def kw(self) -> float:
        return self.dt / self.tau_omega


@dataclass(frozen=True)
class TerrainProfile:
    """Synthetic terrain response used as closed-loop ground truth."""

    name: str
    gain_v: float
    gain_omega: float
    tau_v_true: float
    tau_omega_true: float
    curvature_slip_c: float
    noise_std_v: float
    noise_std_omega: float

    def __post_init__(self) -> None:
        for g in (self.gain_v, self.gain_omega):
            if not (0.0 < g <= 1.2):
                raise ValueError(f"terrain gains must lie in (0, 1.2], got {g}")
        if self.tau_v_true <= 0 or self.tau_omega_true <= 0:
            raise ValueError("true time constants must be positive")
        if self.noise_std_v < 0 or self.noise_std_omega < 0 or self.curvature_slip_c < 0:
            raise ValueError("noise stds and slip coefficient must be non-negative")

    @classmethod
    def nominal_equivalent(cls, p: NominalParams, name: str = "nominal") -> "TerrainProfile":
        return cls(name, 1.0, 1.0, p.tau_v, p.tau_omega, 0.0, 0.0, 0.0)


# Ordered by difficulty; all values are configuration, not measured data.
TILE = TerrainProfile("tile", 0.97, 0.97, 0.45, 0.30, 0.05, 0.01, 0.01)
ASPHALT = TerrainProfile("asphalt", 0.92, 0.92, 0.50, 0.35, 0.15, 0.02, 0.02)
GRASS = TerrainProfile("grass", 0.82, 0.82, 0.60, 0.45, 0.35, 0.04, 0.04)
DEFAULT_TERRAINS = (TILE, ASPHALT, GRASS)


@dataclass(frozen=True)
class Edd5Params:
    """Extended differential drive: wheel slip scales and ICR positions."""

    alpha_l: float = 1.0
    alpha_r: float = 1.0
    x_icr: float = 0.0
    y_icr_l: float = -0.2
    y_icr_r: float = 0.2

    def __post_init__(self) -> None:
        if not (self.y_icr_l < 0.0 < self.y_icr_r):
            raise ValueError("ICRs must straddle the centerline: y_icr_l < 0 < y_icr_r")

    @classmethod
    def ideal(cls, track_width: float) -> "Edd5Params":
        return cls(1.0, 1.0, 0.0, -track_width / 2, track_width / 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha_l, self.alpha_r, self.x_icr, self.y_icr_l, self.y_icr_r])


# ---------------------------------------------------------------- geometry


def arc_displacement(theta, vx, vy, omega, dt):
    """World-frame displacement for constant body twist held over ``dt``.

    Exact for constant ``(vx, vy, omega)``; falls back to a second-order
    expansion when ``|omega| < 1e-6``.
    """
    theta, vx, vy, omega = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (theta, vx, vy, omega)))
    small = np.abs(omega) < SMALL_OMEGA
    w = np.where(small, 1.0, omega)
    phi = w * dt
    sin_phi = np.sin(phi)
    one_m_cos = 2.0 * np.sin(0.5 * phi) ** 2
    lon = np.where(small, vx * dt - 0.5 * vy * omega * dt * dt, (vx * sin_phi - vy * one_m_cos) / w)
    lat = np.where(small, 0.5 * vx * omega * dt * dt + vy * dt, (vx * one_m_cos + vy * sin_phi) / w)
    c, s = np.cos(theta), np.sin(theta)
    return c * lon - s * lat, s * lon + c * lat


def _advance_pose(states: np.ndarray, vx, vy, omega, dt: float) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(states.shape, np.shape(vx) + (5,)), dtype=float)
    theta = states[..., THETA]
    if np.isscalar(vy) and vy == 0.0:
        # Chord of the arc: length v*dt*sinc(phi/2), direction theta + phi/2.
        phi = np.multiply(omega, dt)
        chord = np.multiply(vx, dt) * np.sinc(phi / (2.0 * np.pi))
        mid = theta + 0.5 * phi
        dX, dY = chord * np.cos(mid), chord * np.sin(mid)
    else:
        dX, dY = arc_displacement(theta, vx, vy, omega, dt)
        phi = np.multiply(omega, dt)
    out[..., X] = states[..., X] + dX
    out[..., Y] = states[..., Y] + dY
    out[..., THETA] = wrap_angles(theta + phi)
    return out


# ---------------------------------------------------------- nominal model


def nominal_step_batch(states: np.ndarray, controls: np.ndarray, p: NominalParams) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    v, w = states[..., V], states[..., OMEGA]
    out = _advance_pose(states, v, 0.0, w, p.dt)
    out[..., V] = v + p.kv * (controls[..., 0] - v)
    out[..., OMEGA] = w + p.kw * (controls[..., 1] - w)
    return out


def step_nominal(s: RobotState, u: Control, p: NominalParams) -> RobotState:
    """Advance the nominal dynamic unicycle one step (no learned correction)."""
    return RobotState.from_array(nominal_step_batch(s.as_array(), u.as_array(), p))


def nominal_jacobian_batch(states: np.ndarray, p: NominalParams) -> np.ndarray:
    """State Jacobians of :func:`nominal_step_batch`, shape ``(..., 5, 5)``.

    The nominal step does not depend on the control in the pose rows and is
    affine in it in the velocity rows, so the Jacobian is control-free.
    """
    states = np.asarray(states, dtype=float)
    th, v, w = states[..., THETA], states[..., V], states[..., OMEGA]
    dt = p.dt
    small = np.abs(w) < SMALL_OMEGA
    ws = np.where(small, 1.0, w)
    phi = ws * dt
    sin_phi, cos_phi = np.sin(phi), np.cos(phi)
    one_m_cos = 2.0 * np.sin(0.5 * phi) ** 2

    lon = np.where(small, v * dt, v * sin_phi / ws)
    lat = np.where(small, 0.5 * v * w * dt * dt, v * one_m_cos / ws)
    lon_v = np.where(small, dt, sin_phi / ws)
    lat_v = np.where(small, 0.5 * w * dt * dt, one_m_cos / ws)
    lon_w = np.where(small, 0.0, v * (dt * cos_phi / ws - sin_phi / ws**2))
    lat_w = np.where(small, 0.5 * v * dt * dt, v * (dt * sin_phi / ws - one_m_cos / ws**2))

    c, s = np.cos(th), np.sin(th)
    J = np.zeros(states.shape[:-1] + (5, 5))
    J[..., X, X] = 1.0
    J[..., Y, Y] = 1.0
    J[..., THETA, THETA] = 1.0
    J[..., X, THETA] = -s * lon - c * lat
    J[..., Y, THETA] = c * lon - s * lat
    J[..., X, V] = c * lon_v - s * lat_v
    J[..., Y, V] = s * lon_v + c * lat_v
    J[..., X, OMEGA] = c * lon_w - s * lat_w
    J[..., Y, OMEGA] = s * lon_w + c * lat_w
    J[..., THETA, OMEGA] = dt
    J[..., V, V] = 1.0 - p.kv
    J[..., OMEGA, OMEGA] = 1.0 - p.kw
    return J


def jacobian_nominal(s: RobotState, u: Control, p: NominalParams) -> np.ndarray:
    """Jacobian of :func:`step_nominal` with respect to the state at ``(s, u)``."""
    del u  # the nominal Jacobian is control-independent
    return nominal_jacobian_batch(s.as_array(), p)


# ------------------------------------------------------ kinematic baselines


def unicycle_step_batch(states: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    v, w = controls[..., 0], controls[..., 1]
    out = _advance_pose(states, v, 0.0, w, dt)
    out[..., V] = v
    out[..., OMEGA] = w
    return out


def step_kinematic_unicycle(s: RobotState, u: Control, dt: float) -> RobotState:
    """Velocities jump to the command; pose follows the commanded arc."""
    return RobotState.from_array(unicycle_step_batch(s.as_array(), u.as_array(), dt))


def edd5_body_velocities(controls: np.ndarray, p: Edd5Params, track_width: float):
    """Map commands to body ``(v_x, v_y, omega)`` through the five-parameter model."""
    span = p.y_icr_r - p.y_icr_l
    if span <= 1e-6:
        raise DegenerateIcrError(f"ICR span {span!r} is degenerate")
    controls = np.asarray(controls, dtype=float)
    v_ref, w_ref = controls[..., 0], controls[..., 1]
    v_l = p.alpha_l * (v_ref - 0.5 * track_width * w_ref)
    v_r = p.alpha_r * (v_ref + 0.5 * track_width * w_ref)
    omega = (v_r - v_l) / span
    vx = (v_l * p.y_icr_r - v_r * p.y_icr_l) / span
    vy = p.x_icr * omega
    return vx, vy, omega


def edd5_step_batch(states: np.ndarray, controls: np.ndarray, p: Edd5Params, track_width: float, dt: float) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    vx, vy, w = edd5_body_velocities(controls, p, track_width)
    out = _advance_pose(states, vx, vy, w, dt)
    out[..., V] = vx
    out[..., OMEGA] = w
    return out


def step_edd5(s: RobotState, u: Control, p: Edd5Params, track_width: float, dt: float) -> RobotState:
    if track_width <= 0:
        raise ValueError("track_width must be positive")
    return RobotState.from_array(edd5_step_batch(s.as_array(), u.as_array(), p, track_width, dt))


def fit_edd5(commands: np.ndarray, body_velocities: np.ndarray, track_width: float) -> Edd5Params:
    """Least-squares EDD5 fit from commands to measured ``(v_x, v_y, omega)``.

    ``omega = a v_r - b v_l`` and ``v_x = c v_l + e v_r`` are linear in the
    ideal wheel speeds; the five parameters are recovered from ``(a, b, c, e)``
    and a scalar fit of ``v_y = x_icr omega``.
    """
    commands = np.asarray(commands, dtype=float)
    meas = np.asarray(body_velocities, dtype=float)
    v_l = commands[:, 0] - 0.5 * track_width * commands[:, 1]
    v_r = commands[:, 0] + 0.5 * track_width * commands[:, 1]
    (a, neg_b), *_ = np.linalg.lstsq(np.column_stack([v_r, v_l]), meas[:, 2], rcond=None)
    (c, e), *_ = np.linalg.lstsq(np.column_stack([v_l, v_r]), meas[:, 0], rcond=None)
    b = -neg_b
    y_r = c / b
    y_l = -e / a
    span = y_r - y_l
    wv = meas[:, 2]
    x_icr = float(wv @ meas[:, 1] / (wv @ wv)) if wv @ wv > 0 else 0.0
    return Edd5Params(alpha_l=b * span, alpha_r=a * span, x_icr=x_icr, y_icr_l=y_l, y_icr_r=y_r)


# ------------------------------------------------------ synthetic terrain


def true_velocity_update(states: np.ndarray, controls: np.ndarray, t: TerrainProfile, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free next-step ``(v, omega)`` of the synthetic terrain."""
    v, w = states[..., V], states[..., OMEGA]
    v_ref, w_ref = controls[..., 0], controls[..., 1]
    v_next = v + (dt / t.tau_v_true) * (t.gain_v * v_ref - v)
    w_target = t.gain_omega * w_ref / (1.0 + t.curvature_slip_c * np.abs(v))
    w_next = w + (dt / t.tau_omega_true) * (w_target - w)
    return v_next, w_next


def step_true_terrain(s: RobotState, u: Control, t: TerrainProfile, rng: np.random.Generator, dt: float) -> RobotState:
    """One step of the ground-truth simulator, noise drawn from ``rng``."""
    st = s.as_array()
    v_next, w_next = true_velocity_update(st, u.as_array(), t, dt)
    noise = rng.standard_normal(2)
    out = _advance_pose(st, st[V], 0.0, st[OMEGA], dt)
    out[V] = v_next + t.noise_std_v * noise[0]
    out[OMEGA] = w_next + t.noise_std_omega * noise[1]
    return RobotState.from_array(out)


# ----------------------------------------------------------- training data


@dataclass(frozen=True)
class TrainingData:
    """Residual-learning records.

    ``inputs`` rows are ``(v, omega, v_ref, omega_ref)``; ``residuals`` rows are
    measured minus nominal next-step ``(v, omega)``; ``next_velocities`` are the
    measured next-step velocities (used to fit EDD5).
    """

    inputs: np.ndarray
    residuals: np.ndarray
    next_velocities: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _excite(profile: TerrainProfile, nominal: NominalParams, n_points: int, rng: np.random.Generator,
            u_min: Control, u_max: Control, stride: int, hold: tuple[int, int]):
    lo, hi = u_min.as_array(), u_max.as_array()
    s = RobotState(0.0, 0.0, 0.0, 0.0, 0.0)
    u = Control(*rng.uniform(lo, hi))
    remaining = int(rng.integers(hold[0], hold[1] + 1))
    recs_in, recs_res, recs_next = [], [], []
    tick = 0
    while len(recs_in) < n_points:
        if remaining <= 0:
            u = Control(*rng.uniform(lo, hi))
            remaining = int(rng.integers(hold[0], hold[1] + 1))
        s_true = step_true_terrain(s, u, profile, rng, nominal.dt)
        if tick % stride == 0:
            s_nom = step_nominal(s, u, nominal)
            recs_in.append((s.v, s.omega, u.v_ref, u.omega_ref))
            recs_res.append((s_true.v - s_nom.v, s_true.omega - s_nom.omega))
            recs_next.append((s_true.v, s_true.omega))
        s = s_true
        remaining -= 1
        tick += 1
    return np.array(recs_in), np.array(recs_res), np.array(recs_next)


def generate_training_data(profile: TerrainProfile, nominal: NominalParams, n_points: int = 300,
                           rng: np.random.Generator | None = None, *,
                           u_min: Control = Control(-0.5, -2.0), u_max: Control = Control(2.0, 2.0),
                           stride: int = 3, hold: tuple[int, int] = (5, 40)) -> TrainingData:
    """Drive the terrain simulator with random held commands and record residuals.

    Commands are redrawn uniformly within bounds and held for a random number of
    ticks so both transients and settled responses appear; every ``stride``-th
    tick is recorded.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    inputs, res, nxt = _excite(profile, nominal, n_points, rng, u_min, u_max, stride, hold)
    return TrainingData(inputs, res, nxt)


def generate_shared_training_data(profiles, nominal: NominalParams, n_points: int = 300,
                                  rng: np.random.Generator | None = None, **kw) -> tuple[np.ndarray, np.ndarray]:
    """Shared-input dataset: ``(n, 4)`` inputs, ``(n, 2M)`` residual outputs.

    Inputs are pooled from excitation runs on every terrain; each terrain's
    residual (with its own measurement noise) is then evaluated at every input,
    giving columns ``[dv_1, dw_1, dv_2, dw_2, ...]``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    profiles = list(profiles)
    M = len(profiles)
    counts = [n_points // M + (1 if i < n_points % M else 0) for i in range(M)]
    inputs = np.concatenate([
        generate_training_data(p, nominal, c, rng, **kw).inputs for p, c in zip(profiles, counts) if c > 0
    ])
    n = inputs.shape[0]
    states = np.zeros((n, 5))
    states[:, V] = inputs[:, 0]
    states[:, OMEGA] = inputs[:, 1]
    controls = inputs[:, 2:4]
    nom = nominal_step_batch(states, controls, nominal)
    outputs = np.empty((n, 2 * M))
    for j, p in enumerate(profiles):
        v_next, w_next = true_velocity_update(states, controls, p, nominal.dt)
        noise = rng.standard_normal((n, 2))
        outputs[:, 2 * j] = v_next + p.noise_std_v * noise[:, 0] - nom[:, V]
        outputs[:, 2 * j + 1] = w_next + p.noise_std_omega * noise[:, 1] - nom[:, OMEGA]
    return inputs, outputs
