"""Online terrain-weight estimation.

Keeps a sliding window of measured next-step velocities next to each
terrain's predicted next-step velocities and fits simplex weights by
L1-regularized least squares, anchored at the previous estimate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import OMEGA, V, Control, RobotState, TerrainWeights
from .dynamics import NominalParams, nominal_step_batch
from .gp import GpModel, predict


@dataclass(frozen=True)
class WeightSolverConfig:
    gamma: float = 1e-3  # velocity residual differences are ~1e-2, squared ~1e-4 per row
    max_iters: int = 200
    tol: float = 1e-8
    step0: float = 0.5

    def __post_init__(self) -> None:
        if self.gamma < 0 or self.tol <= 0 or self.max_iters < 1:
            raise ValueError(f"invalid solver config: {self}")


@dataclass(frozen=True)
class HistoryBuffer:
    """FIFO window of ``(measured (v, w), per-terrain predicted (v, w))`` rows."""

    capacity: int
    M: int
    Y: np.ndarray = field(default=None)  # (k, 2)
    F: np.ndarray = field(default=None)  # (k, M, 2)

    def __post_init__(self) -> None:
        if self.capacity < 1 or self.M < 1:
            raise ValueError("capacity and M must be >= 1")
        if self.Y is None:
            object.__setattr__(self, "Y", np.zeros((0, 2)))
        if self.F is None:
            object.__setattr__(self, "F", np.zeros((0, self.M, 2)))

    def __len__(self) -> int:
        return self.Y.shape[0]

    @property
    def Y_v(self) -> np.ndarray:
        return self.Y[:, 0]

    @property
    def Y_omega(self) -> np.ndarray:
        return self.Y[:, 1]

    @property
    def F_v(self) -> np.ndarray:
        return self.F[:, :, 0]

    @property
    def F_omega(self) -> np.ndarray:
        return self.F[:, :, 1]

    def push(self, measured, per_terrain_pred) -> "HistoryBuffer":
        measured = np.asarray(measured, dtype=float).reshape(1, 2)
        pred = np.asarray(per_terrain_pred, dtype=float)
        if pred.shape != (self.M, 2):
            raise ValueError(f"expected ({self.M}, 2) predictions, got {pred.shape}")
        Y = np.concatenate([self.Y, measured])[-self.capacity:]
        F = np.concatenate([self.F, pred[None]])[-self.capacity:]
        return HistoryBuffer(self.capacity, self.M, Y, F)


def push_observation(buf: HistoryBuffer, measured, per_terrain_pred) -> HistoryBuffer:
    return buf.push(measured, per_terrain_pred)


def project_simplex(z) -> np.ndarray:
    """Euclidean projection onto ``{w : w >= 0, sum(w) = 1}`` (sort-and-threshold)."""
    z = np.asarray(z, dtype=float)
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, z.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    w = np.maximum(z - tau, 0.0)
    return w / w.sum()


def weight_objective(buf: HistoryBuffer, w: np.ndarray, prev: np.ndarray, gamma: float) -> float:
    rv = buf.Y_v - buf.F_v @ w
    rw = buf.Y_omega - buf.F_omega @ w
    return float(rv @ rv + rw @ rw + gamma * np.abs(w - prev).sum())


@dataclass(frozen=True)
class WeightSolution:
    weights: TerrainWeights
    objective: float
    trace: tuple[float, ...]
    empty: bool = False
    polished: bool = False


def _stacked(buf: HistoryBuffer) -> tuple[np.ndarray, np.ndarray]:
    return np.concatenate([buf.Y_v, buf.Y_omega]), np.concatenate([buf.F_v, buf.F_omega])


def _active_set_candidates(F: np.ndarray, Y: np.ndarray, prev: np.ndarray, gamma: float):
    """Exact minimizers of the objective restricted to each coordinate pattern.

    Each coordinate is pinned at 0, pinned at ``prev``, or free with a fixed
    sign of ``w - prev``; the restricted problem is an equality-constrained QP.
    """
    M = prev.size
    H = 2.0 * F.T @ F
    b = 2.0 * F.T @ Y
    for pattern in itertools.product(range(4), repeat=M):
        w = np.zeros(M)
        free, signs = [], []
        for i, p in enumerate(pattern):
            if p == 1:
                w[i] = prev[i]
            elif p >= 2:
                free.append(i)
                signs.append(1.0 if p == 2 else -1.0)
        if not free:
            if abs(w.sum() - 1.0) < 1e-12:
                yield w
            continue
        fi = np.array(free)
        fixed = np.setdiff1d(np.arange(M), fi)
        k = fi.size
        KKT = np.zeros((k + 1, k + 1))
        KKT[:k, :k] = H[np.ix_(fi, fi)]
        KKT[:k, k] = 1.0
        KKT[k, :k] = 1.0
        rhs = np.empty(k + 1)
        rhs[:k] = b[fi] - H[np.ix_(fi, fixed)] @ w[fixed] - gamma * np.array(signs)
        rhs[k] = 1.0 - w[fixed].sum()
        sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
        w[fi] = sol[:k]
        if np.all(w >= 0.0) and abs(w.sum() - 1.0) < 1e-12:
            yield w


def solve_weights_detailed(buf: HistoryBuffer, prev: TerrainWeights, cfg: WeightSolverConfig = WeightSolverConfig()) -> WeightSolution:
    """Projected subgradient descent with backtracking, then an active-set polish.

    The subgradient phase starts at ``prev`` and never increases the
    objective. For small ``M`` the polish enumerates coordinate patterns and
    keeps an exact candidate only if it strictly improves on the iterate.
    """
    p = prev.w
    if len(buf) == 0:
        return WeightSolution(prev, 0.0, (), empty=True)
    Y, F = _stacked(buf)
    gamma = cfg.gamma

    def obj(w):
        r = Y - F @ w
        return float(r @ r + gamma * np.abs(w - p).sum())

    w = p.copy()
    f = obj(w)
    trace = [f]
    scale = max(float(np.abs(F).max()) ** 2 * F.shape[0], 1e-12)
    for t in range(cfg.max_iters):
        g = -2.0 * F.T @ (Y - F @ w) + gamma * np.sign(w - p)
        step = cfg.step0 / (scale * (1.0 + t))
        improved = False
        for _ in range(30):
            cand = project_simplex(w - step * g)
            fc = obj(cand)
            if fc < f:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        gain = f - fc
        w, f = cand, fc
        trace.append(f)
        if gain < cfg.tol:
            break

    polished = False
    if p.size <= 6:
        for cand in _active_set_candidates(F, Y, p, gamma):
            fc = obj(cand)
            if fc < f - 1e-15 * max(1.0, abs(f)):
                w, f, polished = cand / cand.sum(), fc, True
    w = np.clip(w, 0.0, 1.0)
    w = w / w.sum()
    return WeightSolution(TerrainWeights(w), obj(w), tuple(trace), polished=polished)


def solve_weights(buf: HistoryBuffer, prev: TerrainWeights, cfg: WeightSolverConfig = WeightSolverConfig()) -> TerrainWeights:
    """Fit terrain weights to the history window; empty window returns ``prev``."""
    return solve_weights_detailed(buf, prev, cfg).weights


def per_terrain_mean_prediction(models: GpModel | Sequence[GpModel], state: RobotState, u: Control,
                                nominal: NominalParams) -> np.ndarray:
    """Absolute next-step ``(v, omega)`` predicted under each terrain, ``(M, 2)``.

    Nominal next velocities plus each terrain's GP residual mean, so the rows
    are commensurate with measured velocities.
    """
    query = np.array([state.v, state.omega, u.v_ref, u.omega_ref])
    nom = nominal_step_batch(state.as_array(), u.as_array(), nominal)
    base = np.array([nom[V], nom[OMEGA]])
    if isinstance(models, GpModel):
        m, _ = predict(models, query)
        res = m.reshape(-1, 2)
    else:
        res = np.array([predict(mod, query)[0][:2] for mod in models])
    return base + res
