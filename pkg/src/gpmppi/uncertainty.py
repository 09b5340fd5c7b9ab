"""Belief propagation and chance-constraint tightening.

The belief is pushed through the nominal model linearized at the mean, with
the ensemble GP variances entering as additive velocity noise. Lane and
obstacle constraints are then tightened by quantile-scaled position
uncertainty so that holding them at the mean implies holding them with
probability ``p_x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import OMEGA, V, BeliefState, Control, GaussianCorrection, symmetrize
from .dynamics import NominalParams, nominal_jacobian_batch, nominal_step_batch

# Acklam's rational approximation to the normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def chi2_quantile_2dof(p: float) -> float:
    """Quantile of the chi-squared distribution with two degrees of freedom."""
    if not (0.0 <= p < 1.0):
        raise ValueError(f"p must lie in [0, 1), got {p!r}")
    return -2.0 * math.log1p(-p)


def _normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    """Standard normal quantile: rational approximation plus one Halley step."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    e = _normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@dataclass(frozen=True)
class QuantileTables:
    """Quantiles for a chance-constraint probability ``p_x`` in (0.5, 1)."""

    p_x: float
    chi2_2: float
    z: float

    @classmethod
    def for_probability(cls, p_x: float) -> "QuantileTables":
        if not (0.5 < p_x < 1.0):
            raise ValueError(f"p_x must lie in (0.5, 1), got {p_x!r}")
        return cls(p_x, chi2_quantile_2dof(p_x), normal_quantile(p_x))


def propagate_belief(b: BeliefState, u: Control, corr: GaussianCorrection, p: NominalParams) -> BeliefState:
    """One linearized step: mean through the model, covariance through its Jacobian."""
    mean = nominal_step_batch(b.mean, u.as_array(), p)
    mean[V] += corr.mean[0]
    mean[OMEGA] += corr.mean[1]
    J = nominal_jacobian_batch(b.mean, p)
    cov = J @ b.cov @ J.T
    cov[V, V] += corr.cov[0, 0]
    cov[OMEGA, OMEGA] += corr.cov[1, 1]
    return BeliefState(mean, symmetrize(cov))


def max_eig_2x2(cov) -> np.ndarray:
    """Largest eigenvalue of symmetric 2x2 matrices (closed form, broadcasts)."""
    cov = np.asarray(cov, dtype=float)
    a, b, c = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 1]
    half_tr = 0.5 * (a + c)
    return half_tr + np.hypot(0.5 * (a - c), b)


def tighten_lane_radius(r: float, cov_xy, q: QuantileTables) -> float:
    """Shrunk lane half-width ``r - sqrt(chi2_2(p_x) * lambda_max)``.

    A result ``<= 0`` means no position satisfies the tightened lane; callers
    treat that step as violating rather than failing.
    """
    if r <= 0:
        raise ValueError("lane half-width must be positive")
    lam = max(float(max_eig_2x2(cov_xy)), 0.0)
    return r - math.sqrt(q.chi2_2 * lam)


def lane_radii(r: float, cov_xy: np.ndarray, q: QuantileTables) -> np.ndarray:
    """Array form of :func:`tighten_lane_radius` over ``(..., 2, 2)`` covariances."""
    lam = np.maximum(max_eig_2x2(cov_xy), 0.0)
    return r - np.sqrt(q.chi2_2 * lam)


@dataclass(frozen=True)
class ObstacleTightening:
    d: float
    d_bar: float
    n: np.ndarray
    margin: float
    degenerate: bool = False

    @property
    def collision_free(self) -> bool:
        return self.d_bar > 0.0


def obstacle_normal(robot_xy, center) -> tuple[np.ndarray, bool]:
    """Unit vector between a circle's center and the robot; ``+x`` at the center."""
    diff = np.asarray(robot_xy, dtype=float) - np.asarray(center, dtype=float)
    norm = math.hypot(diff[0], diff[1])
    if norm == 0.0:
        return np.array([1.0, 0.0]), True
    return diff / norm, False


def tighten_obstacle_distance(robot_xy, obstacle, cov_xy, q: QuantileTables) -> ObstacleTightening:
    """Signed distance to a circle minus ``z(p_x) * sqrt(n^T Sigma n)``."""
    center = np.asarray(obstacle.center, dtype=float)
    robot_xy = np.asarray(robot_xy, dtype=float)
    n, degenerate = obstacle_normal(robot_xy, center)
    d = float(np.hypot(*(robot_xy - center))) - obstacle.radius
    cov_xy = np.asarray(cov_xy, dtype=float)
    margin = q.z * math.sqrt(max(float(n @ cov_xy @ n), 0.0))
    return ObstacleTightening(d, d - margin, n, margin, degenerate)


def obstacle_margins(positions: np.ndarray, cov_xy: np.ndarray, centers: np.ndarray, q: QuantileTables) -> np.ndarray:
    """Per-step, per-obstacle margins ``z * sqrt(n^T Sigma n)``, shape ``(N, O)``.

    ``positions`` ``(N, 2)`` fixes the normal direction for each step.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if centers.shape[0] == 0:
        return np.zeros((positions.shape[0], 0))
    diff = positions[:, None, :] - centers[None, :, :]
    norm = np.hypot(diff[..., 0], diff[..., 1])
    safe = norm > 0.0
    n = np.where(safe[..., None], diff / np.where(safe, norm, 1.0)[..., None], np.array([1.0, 0.0]))
    quad = np.einsum("noi,nij,noj->no", n, cov_xy, n)
    return q.z * np.sqrt(np.maximum(quad, 0.0))
