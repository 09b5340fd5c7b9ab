"""Track/obstacle geometry and the path-tracking and avoidance costs.

Scalar functions score one rollout step by step and are the readable
reference; the ``*_batch`` functions score ``S`` rollouts at once for the
planner and are tested against the scalar ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import THETA, V, X, Y, GaussianCorrection, RobotState, body_frame_displacement, body_frame_displacement_batch

SLIP_EPS_LONG = 1e-3
TRACKING_DECAY = 0.9
DEFAULT_HIGH_COST = 1e4


@dataclass(frozen=True)
class Track:
    """Lane around a centerline: an analytic circle or a polyline."""

    half_width: float
    circle_center: tuple[float, float] | None = None
    circle_radius: float | None = None
    waypoints: np.ndarray | None = None
    closed: bool = True

    def __post_init__(self) -> None:
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.is_circle:
            if self.circle_radius is None or self.circle_radius <= 0:
                raise ValueError("circle track needs a positive radius")
            object.__setattr__(self, "circle_center", tuple(float(c) for c in self.circle_center))
        else:
            if self.waypoints is None:
                raise ValueError("track needs a circle or waypoints")
            wp = np.array(self.waypoints, dtype=float)
            if wp.ndim != 2 or wp.shape[1] != 2 or wp.shape[0] < 2:
                raise ValueError("polyline needs at least two 2-D waypoints")
            seg = np.diff(np.vstack([wp, wp[:1]]) if self.closed else wp, axis=0)
            if np.any(np.hypot(seg[:, 0], seg[:, 1]) == 0.0):
                raise ValueError("consecutive waypoints must be distinct")
            wp.setflags(write=False)
            object.__setattr__(self, "waypoints", wp)

    @property
    def is_circle(self) -> bool:
        return self.circle_center is not None

    @classmethod
    def circle(cls, center=(0.0, 0.0), radius: float = 4.0, half_width: float = 0.5) -> "Track":
        return cls(half_width, circle_center=tuple(center), circle_radius=radius)

    @classmethod
    def square(cls, center=(0.0, 0.0), side: float = 8.0, half_width: float = 0.5) -> "Track":
        cx, cy = center
        h = side / 2
        wp = np.array([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]])
        return cls(half_width, waypoints=wp, closed=True)

    @property
    def r(self) -> float:
        return self.half_width

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        wp = self.waypoints
        ends = np.vstack([wp[1:], wp[:1]]) if self.closed else wp[1:]
        return wp[: ends.shape[0]], ends

    def length(self) -> float:
        if self.is_circle:
            return 2 * math.pi * self.circle_radius
        a, b = self.segments()
        return float(np.hypot(*(b - a).T).sum())

    def centerline_distance(self, xy) -> np.ndarray:
        """Distance from points ``(..., 2)`` to the nearest centerline point."""
        xy = np.asarray(xy, dtype=float)
        if self.is_circle:
            cx, cy = self.circle_center
            return np.abs(np.hypot(xy[..., 0] - cx, xy[..., 1] - cy) - self.circle_radius)
        a, b = self.segments()
        ab = b - a
        ab2 = (ab * ab).sum(1)
        rel = xy[..., None, :] - a
        t = np.clip((rel * ab).sum(-1) / ab2, 0.0, 1.0)
        d = rel - t[..., None] * ab
        return np.hypot(d[..., 0], d[..., 1]).min(-1)

    def start_pose(self) -> tuple[float, float, float]:
        """A point on the centerline and the counter-clockwise tangent heading."""
        if self.is_circle:
            cx, cy = self.circle_center
            return cx + self.circle_radius, cy, math.pi / 2
        a, b = self.segments()
        mid = 0.5 * (a[0] + b[0])
        return float(mid[0]), float(mid[1]), math.atan2(b[0, 1] - a[0, 1], b[0, 0] - a[0, 0])


@dataclass(frozen=True)
class CircleObstacle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def signed_distance(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.hypot(xy[..., 0] - self.center[0], xy[..., 1] - self.center[1]) - self.radius


def _check_unit(name: str, values: Sequence[float]) -> None:
    for i, a in enumerate(values):
        if not (0.0 <= a <= 1.0):
            raise ValueError(f"{name}{i} must lie in [0, 1], got {a!r}")


@dataclass(frozen=True)
class TrackingWeights:
    alpha0: float = 0.1  # variance
    alpha1: float = 1.0  # lane deviation
    alpha2: float = 0.3  # slip
    alpha3: float = 1.0  # lane violation
    alpha4: float = 0.2  # speed shortfall

    def __post_init__(self) -> None:
        _check_unit("alpha", self.as_tuple())

    def as_tuple(self) -> tuple[float, ...]:
        return (self.alpha0, self.alpha1, self.alpha2, self.alpha3, self.alpha4)


@dataclass(frozen=True)
class AvoidanceWeights:
    beta0: float = 0.1  # variance
    beta1: float = 1.0  # collision
    beta2: float = 0.5  # distance to goal
    beta3: float = 1.0  # terminal

    def __post_init__(self) -> None:
        _check_unit("beta", self.as_tuple())

    def as_tuple(self) -> tuple[float, ...]:
        return (self.beta0, self.beta1, self.beta2, self.beta3)


@dataclass(frozen=True)
class GoalSpec:
    position: tuple[float, float]
    capture_radius: float = 0.5

    def __post_init__(self) -> None:
        if self.capture_radius <= 0:
            raise ValueError("capture_radius must be positive")
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))


# ------------------------------------------------------------ scalar terms


def lane_deviation(track: Track, xy) -> float:
    """Centerline distance normalized by the half-width (1 on the boundary)."""
    return float(track.centerline_distance(xy)) / track.half_width


def lane_violation(track: Track, xy, r_bar: float) -> int:
    """1 when the point is strictly farther than ``r_bar`` from the centerline."""
    return int(float(track.centerline_distance(xy)) > r_bar)


def slip_ratio(prev_mean: RobotState, next_mean: RobotState) -> float:
    """``|lateral| / max(|longitudinal|, eps)`` of the step's body-frame displacement."""
    lon, lat = body_frame_displacement(prev_mean, next_mean)
    return abs(lat) / max(abs(lon), SLIP_EPS_LONG)


def _as_state(s) -> RobotState:
    return s if isinstance(s, RobotState) else RobotState.from_array(s)


def _trace(c) -> float:
    return c.trace if isinstance(c, GaussianCorrection) else float(c)


def tracking_cost(states, corrections, track: Track, r_bar_per_step, v_desired: float,
                  v_sampled_per_step, w: TrackingWeights) -> float:
    """Path-tracking cost of one rollout.

    ``states`` holds ``N + 1`` means (index 0 is the start); ``corrections``
    holds the ``N`` ensemble corrections (or their traces). Step ``k`` scores
    the state reached after control ``k``. Lane violations are judged against
    the tightened radius ``r_bar[k]``; ``r_bar <= 0`` always counts as violated.
    """
    N = len(states) - 1
    if len(corrections) != N or len(r_bar_per_step) != N or len(v_sampled_per_step) != N:
        raise ValueError("rollout, corrections, r_bar and v_sampled must all have length N")
    a0, a1, a2, a3, a4 = w.as_tuple()
    total = 0.0
    for k in range(N):
        s0, s1 = _as_state(states[k]), _as_state(states[k + 1])
        xy = (s1.X, s1.Y)
        rb = float(r_bar_per_step[k])
        viol = 1 if rb <= 0.0 else lane_violation(track, xy, rb)
        total += (a0 * _trace(corrections[k])
                  + a1 * lane_deviation(track, xy)
                  + a2 * slip_ratio(s0, s1)
                  + a3 * TRACKING_DECAY**k * viol
                  + a4 * max(v_desired - float(v_sampled_per_step[k]), 0.0))
    return total


def collision_indicator(xy, obstacles: Sequence[CircleObstacle], margins=None) -> int:
    """1 if the point violates any obstacle's tightened clearance ``d - margin > 0``."""
    if margins is None:
        margins = np.zeros(len(obstacles))
    for ob, m in zip(obstacles, margins):
        if float(ob.signed_distance(xy)) - float(m) <= 0.0:
            return 1
    return 0


def stage_goal_cost(xy, goal: GoalSpec) -> float:
    return math.hypot(xy[0] - goal.position[0], xy[1] - goal.position[1])


def terminal_cost(final_xy, goal: GoalSpec, high_cost: float = DEFAULT_HIGH_COST) -> float:
    if high_cost <= 0:
        raise ValueError("high_cost must be positive")
    return 0.0 if stage_goal_cost(final_xy, goal) <= goal.capture_radius else float(high_cost)


def avoidance_cost(states, corrections, obstacles: Sequence[CircleObstacle], margins_per_step, goal: GoalSpec,
                   w: AvoidanceWeights, high_cost: float = DEFAULT_HIGH_COST) -> float:
    """Obstacle-avoidance cost of one rollout; ``margins_per_step`` is ``(N, O)``."""
    N = len(states) - 1
    if len(corrections) != N or len(margins_per_step) != N:
        raise ValueError("rollout, corrections and margins must all have length N")
    b0, b1, b2, b3 = w.as_tuple()
    total = 0.0
    for k in range(N):
        s1 = _as_state(states[k + 1])
        xy = (s1.X, s1.Y)
        total += (b0 * _trace(corrections[k])
                  + b1 * collision_indicator(xy, obstacles, margins_per_step[k])
                  + b2 * stage_goal_cost(xy, goal))
    last = _as_state(states[N])
    return total + b3 * terminal_cost((last.X, last.Y), goal, high_cost)


# ------------------------------------------------------------- batch forms


def slip_ratio_batch(states: np.ndarray) -> np.ndarray:
    lon, lat = body_frame_displacement_batch(states[..., :-1, :], states[..., 1:, :])
    return np.abs(lat) / np.maximum(np.abs(lon), SLIP_EPS_LONG)


def tracking_cost_batch(states: np.ndarray, traces: np.ndarray, track: Track, r_bar: np.ndarray,
                        v_desired: float, v_sampled: np.ndarray, w: TrackingWeights) -> np.ndarray:
    """Vectorized :func:`tracking_cost` for ``states`` ``(S, N+1, 5)``."""
    a0, a1, a2, a3, a4 = w.as_tuple()
    N = states.shape[1] - 1
    r_bar = np.asarray(r_bar, dtype=float)
    dist = track.centerline_distance(states[:, 1:, :2])
    viol = (dist > r_bar) | (r_bar <= 0.0)
    decay = TRACKING_DECAY ** np.arange(N)
    cost = a1 * dist / track.half_width + a3 * viol * decay + a4 * np.maximum(v_desired - v_sampled, 0.0)
    if a0:
        cost = cost + a0 * traces
    if a2:
        cost = cost + a2 * slip_ratio_batch(states)
    return cost.sum(axis=1)


def avoidance_cost_batch(states: np.ndarray, traces: np.ndarray, centers: np.ndarray, radii: np.ndarray,
                         margins: np.ndarray, goal: GoalSpec, w: AvoidanceWeights,
                         high_cost: float = DEFAULT_HIGH_COST) -> np.ndarray:
    """Vectorized :func:`avoidance_cost`; ``margins`` is ``(N, O)``."""
    b0, b1, b2, b3 = w.as_tuple()
    xy = states[:, 1:, :2]
    g = np.hypot(xy[..., 0] - goal.position[0], xy[..., 1] - goal.position[1])
    cost = b2 * g
    if b0:
        cost = cost + b0 * traces
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if centers.shape[0]:
        d = np.hypot(xy[..., None, 0] - centers[:, 0], xy[..., None, 1] - centers[:, 1]) - radii
        hit = np.any(d - margins <= 0.0, axis=-1)
        cost = cost + b1 * hit
    total = cost.sum(axis=1)
    miss = g[:, -1] > goal.capture_radius
    return total + b3 * high_cost * miss
