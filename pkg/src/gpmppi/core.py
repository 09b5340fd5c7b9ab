"""Shared value types and planar geometry helpers.

Every container here is a frozen dataclass. The hot paths (rollouts, costs)
work on raw ``numpy`` arrays; these types are the public, validated surface.
State vectors are always ordered ``[X, Y, theta, v, omega]`` and control
vectors ``[v_ref, omega_ref]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

X, Y, THETA, V, OMEGA = range(5)
STATE_DIM = 5
CONTROL_DIM = 2

SYMMETRY_TOL = 1e-10
SIMPLEX_TOL = 1e-9


def wrap_angle(a: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi].

    ``-pi`` maps to ``+pi`` so every angle has one representative.
    """
    a = float(a)
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle` (no finiteness check)."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi)
    w = np.where(w <= 0.0, w + 2.0 * np.pi, w)
    return w - np.pi


@dataclass(frozen=True)
class RobotState:
    """Planar robot state: pose in the world frame plus body velocities."""

    X: float
    Y: float
    theta: float
    v: float
    omega: float

    def __post_init__(self) -> None:
        vals = (self.X, self.Y, self.theta, self.v, self.omega)
        if not all(math.isfinite(float(x)) for x in vals):
            raise ValueError(f"state fields must be finite: {vals}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.theta, self.v, self.omega], dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "RobotState":
        a = np.asarray(a, dtype=float)
        if a.shape != (STATE_DIM,):
            raise ValueError(f"state vector must have shape (5,), got {a.shape}")
        return cls(*(float(x) for x in a))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.X, self.Y])


@dataclass(frozen=True)
class Control:
    """Commanded linear and angular velocity."""

    v_ref: float
    omega_ref: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_ref, self.omega_ref], dtype=float)

    def clamp(self, u_min: "Control", u_max: "Control") -> "Control":
        return Control(
            min(max(self.v_ref, u_min.v_ref), u_max.v_ref),
            min(max(self.omega_ref, u_min.omega_ref), u_max.omega_ref),
        )


@dataclass(frozen=True)
class ControlSequence:
    """Fixed-length sequence of controls, stored as an ``(N, 2)`` array."""

    controls: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.controls, dtype=float)
        if c.ndim != 2 or c.shape[1] != CONTROL_DIM or c.shape[0] < 1:
            raise ValueError(f"controls must have shape (N, 2) with N >= 1, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "controls", c)

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def __len__(self) -> int:
        return self.horizon

    def __getitem__(self, k: int) -> Control:
        return Control(*self.controls[k])

    @classmethod
    def constant(cls, u: Control, horizon: int) -> "ControlSequence":
        return cls(np.tile(u.as_array(), (horizon, 1)))

    @classmethod
    def from_controls(cls, controls: Iterable[Control]) -> "ControlSequence":
        return cls(np.array([c.as_array() for c in controls]))

    def clamped(self, u_min: Control, u_max: Control) -> "ControlSequence":
        return ControlSequence(np.clip(self.controls, u_min.as_array(), u_max.as_array()))

    def within(self, u_min: Control, u_max: Control) -> bool:
        c = self.controls
        return bool(np.all(c >= u_min.as_array()) and np.all(c <= u_max.as_array()))


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class BeliefState:
    """Gaussian belief over the 5-D state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.shape != (STATE_DIM,) or cov.shape != (STATE_DIM, STATE_DIM):
            raise ValueError("belief needs a 5-vector mean and a 5x5 covariance")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("belief contains non-finite values")
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(cov))):
            raise ValueError("belief covariance is not symmetric")
        mean[THETA] = wrap_angle(mean[THETA])
        for a in (mean, cov):
            a.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def certain(cls, state: RobotState | np.ndarray) -> "BeliefState":
        m = state.as_array() if isinstance(state, RobotState) else np.asarray(state, dtype=float)
        return cls(m, np.zeros((STATE_DIM, STATE_DIM)))

    @property
    def cov_xy(self) -> np.ndarray:
        return self.cov[:2, :2]

    def is_psd(self, tol: float = SYMMETRY_TOL) -> bool:
        return bool(np.min(np.linalg.eigvalsh(self.cov)) >= -tol)


@dataclass(frozen=True)
class GaussianCorrection:
    """Velocity correction ``N(mean, cov)`` for ``(delta_v, delta_omega)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise ValueError("correction needs a 2-vector mean and a 2x2 covariance")
        if np.any(np.diag(cov) < 0.0):
            raise ValueError("correction variances must be non-negative")
        for a in (mean, cov):
            a.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def zero(cls) -> "GaussianCorrection":
        return cls(np.zeros(2), np.zeros((2, 2)))

    @property
    def trace(self) -> float:
        return float(self.cov[0, 0] + self.cov[1, 1])


@dataclass(frozen=True)
class TerrainWeights:
    """Convex weights over ``M`` terrains."""

    w: np.ndarray = field()

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float).reshape(-1)
        if w.size < 1:
            raise ValueError("need at least one terrain weight")
        if np.any(w < -SIMPLEX_TOL) or np.any(w > 1.0 + SIMPLEX_TOL):
            raise ValueError(f"weights must lie in [0, 1]: {w}")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def M(self) -> int:
        return self.w.size

    @classmethod
    def uniform(cls, M: int) -> "TerrainWeights":
        return cls(np.full(M, 1.0 / M))

    @classmethod
    def vertex(cls, M: int, i: int) -> "TerrainWeights":
        w = np.zeros(M)
        w[i] = 1.0
        return cls(w)


def body_frame_displacement(from_state: RobotState, to_state: RobotState) -> tuple[float, float]:
    """World displacement ``to - from`` expressed in ``from``'s body frame.

    Returns ``(longitudinal, lateral)`` with lateral positive to the left.
    """
    dx = to_state.X - from_state.X
    dy = to_state.Y - from_state.Y
    c, s = math.cos(from_state.theta), math.sin(from_state.theta)
    return c * dx + s * dy, -s * dx + c * dy


def body_frame_displacement_batch(prev: np.ndarray, nxt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`body_frame_displacement` over ``[..., 5]`` states."""
    dx = nxt[..., X] - prev[..., X]
    dy = nxt[..., Y] - prev[..., Y]
    c, s = np.cos(prev[..., THETA]), np.sin(prev[..., THETA])
    return c * dx + s * dy, -s * dx + c * dy
