"""Exact Gaussian-process regression for velocity residuals.

The model is a zero-mean GP per output with a squared-exponential ARD kernel.
Outputs whose kernels share lengthscales and noise-to-signal ratio share one
Cholesky factor: with ``K_j = s_j R`` and ``sigma_n,j^2 = s_j rho`` every such
output solves against the same normalized matrix ``A = R + rho I``.

``predict``/``predict_batch`` are the exact float64 path. ``EnsembleEvaluator``
is the rollout path: it folds terrain weights into the mean weights ahead of
time and computes the shared quadratic form once per query.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .core import GaussianCorrection, TerrainWeights

JITTER_STEPS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
SIMPLEX_CHECK_TOL = 1e-6


class GpFitError(RuntimeError):
    """Kernel matrix could not be factorized even with the maximal jitter."""


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential ARD kernel plus observation noise."""

    signal_var: float
    lengthscales: tuple[float, ...]
    noise_var: float

    def __post_init__(self) -> None:
        ls = tuple(float(x) for x in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if self.signal_var <= 0 or self.noise_var <= 0 or min(ls) <= 0:
            raise ValueError(f"kernel parameters must be strictly positive: {self}")

    @property
    def ratio(self) -> float:
        return self.noise_var / self.signal_var

    def as_array(self) -> np.ndarray:
        return np.array([self.signal_var, self.noise_var, *self.lengthscales])

    @classmethod
    def from_array(cls, a: np.ndarray) -> "KernelParams":
        return cls(float(a[0]), tuple(float(x) for x in a[2:]), float(a[1]))


def kernel_eval(a, b, p: KernelParams) -> float:
    """``s * exp(-0.5 * sum(((a - b) / l)^2))``."""
    d = (np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) / np.asarray(p.lengthscales)
    return float(p.signal_var * np.exp(-0.5 * d @ d))


def correlation(A: np.ndarray, B: np.ndarray, lengthscales) -> np.ndarray:
    """Unit-variance SE kernel matrix between the rows of ``A`` and ``B``."""
    ls = np.asarray(lengthscales, dtype=float)
    As, Bs = A / ls, B / ls
    d2 = (As * As).sum(1)[:, None] + (Bs * Bs).sum(1)[None, :] - 2.0 * As @ Bs.T
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-0.5 * d2)


def _cholesky_with_jitter(A: np.ndarray) -> tuple[np.ndarray, float]:
    n = A.shape[0]
    for jitter in JITTER_STEPS:
        try:
            return np.linalg.cholesky(A + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            continue
    raise GpFitError(f"kernel matrix not positive definite after jitter up to {JITTER_STEPS[-1]:g}")


@dataclass(frozen=True)
class _Group:
    """Outputs sharing one normalized kernel matrix."""

    outputs: tuple[int, ...]
    lengthscales: np.ndarray
    ratio: float
    chol: np.ndarray
    jitter: float
    beta: np.ndarray  # A^{-1} y for each output in the group, (n, len(outputs))


@dataclass(frozen=True)
class GpModel:
    """Fitted multi-output GP over shared training inputs."""

    inputs: np.ndarray
    outputs: np.ndarray
    kernels: tuple[KernelParams, ...]
    groups: tuple[_Group, ...] = field(repr=False)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.outputs.shape[1]

    @property
    def alphas(self) -> np.ndarray:
        """``(K_j + sigma_n,j^2 I)^{-1} y_j`` stacked as columns, ``(n, J)``."""
        out = np.empty((self.n, self.n_outputs))
        for g in self.groups:
            for col, j in enumerate(g.outputs):
                out[:, j] = g.beta[:, col] / self.kernels[j].signal_var
        return out

    def factor(self, output: int = 0) -> np.ndarray:
        """Lower-triangular ``F`` with ``F F^T = K_j + sigma_n,j^2 I``."""
        for g in self.groups:
            if output in g.outputs:
                return np.sqrt(self.kernels[output].signal_var) * g.chol
        raise IndexError(output)


RATIO_MATCH_RTOL = 1e-12


def _group_kernels(kernels) -> list[tuple[tuple, float, list[int]]]:
    """Group outputs by lengthscales and noise ratio (ratios equal to rounding)."""
    groups: list[tuple[tuple, float, list[int]]] = []
    for j, k in enumerate(kernels):
        for ls, ratio, idx in groups:
            if ls == k.lengthscales and abs(ratio - k.ratio) <= RATIO_MATCH_RTOL * ratio:
                idx.append(j)
                break
        else:
            groups.append((k.lengthscales, k.ratio, [j]))
    return groups


def fit(inputs: np.ndarray, outputs: np.ndarray, kernels) -> GpModel:
    """Factorize the kernel matrices and solve for every output's weights."""
    inputs = np.array(inputs, dtype=float)
    outputs = np.array(outputs, dtype=float)
    if outputs.ndim == 1:
        outputs = outputs[:, None]
    if inputs.ndim != 2 or inputs.shape[0] < 1:
        raise ValueError("inputs must be an (n, d) array with n >= 1")
    if outputs.shape[0] != inputs.shape[0]:
        raise ValueError("inputs and outputs disagree on n")
    if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(outputs))):
        raise ValueError("training data must be finite")
    if isinstance(kernels, KernelParams):
        kernels = [kernels] * outputs.shape[1]
    kernels = tuple(kernels)
    if len(kernels) != outputs.shape[1]:
        raise ValueError(f"need {outputs.shape[1]} kernels, got {len(kernels)}")
    for k in kernels:
        if len(k.lengthscales) != inputs.shape[1]:
            raise ValueError("lengthscale count must match the input dimension")

    groups = []
    for ls, ratio, idx in _group_kernels(kernels):
        A = correlation(inputs, inputs, ls)
        A[np.diag_indices_from(A)] += ratio
        L, jitter = _cholesky_with_jitter(A)
        beta = cho_solve((L, True), outputs[:, idx])
        groups.append(_Group(tuple(idx), np.array(ls), ratio, L, jitter, beta))
    for a in (inputs, outputs):
        a.setflags(write=False)
    return GpModel(inputs, outputs, kernels, tuple(groups))


def predict_batch(model: GpModel, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances, each ``(S, J)``."""
    queries = np.asarray(queries, dtype=float).reshape(-1, model.inputs.shape[1])
    S, J = queries.shape[0], model.n_outputs
    means = np.zeros((S, J))
    variances = np.zeros((S, J))
    if S == 0:
        return means, variances
    for g in model.groups:
        r = correlation(queries, model.inputs, g.lengthscales)
        v = solve_triangular(g.chol, r.T, lower=True)
        q = 1.0 - np.einsum("ij,ij->j", v, v)
        np.maximum(q, 0.0, out=q)
        m = r @ g.beta
        for col, j in enumerate(g.outputs):
            means[:, j] = m[:, col]
            variances[:, j] = model.kernels[j].signal_var * q
    return means, variances


def predict(model: GpModel, query) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of every output at one query point."""
    m, v = predict_batch(model, np.asarray(query, dtype=float)[None, :])
    return m[0], v[0]


def ensemble_combine(means: np.ndarray, covs: np.ndarray, w: TerrainWeights | np.ndarray) -> GaussianCorrection:
    """Weighted terrain ensemble: mean ``sum w_i m_i``, covariance ``sum w_i^2 C_i``."""
    wv = w.w if isinstance(w, TerrainWeights) else np.asarray(w, dtype=float)
    means = np.asarray(means, dtype=float).reshape(-1, 2)
    covs = np.asarray(covs, dtype=float).reshape(-1, 2, 2)
    if wv.size != means.shape[0] or covs.shape[0] != means.shape[0] or wv.size < 1:
        raise ValueError("need one weight per terrain")
    if np.any(wv < -SIMPLEX_CHECK_TOL) or np.any(wv > 1 + SIMPLEX_CHECK_TOL) or abs(wv.sum() - 1) > SIMPLEX_CHECK_TOL:
        raise ValueError(f"terrain weights are off the simplex: {wv}")
    mean = wv @ means
    cov = np.einsum("i,ijk->jk", wv * wv, covs)
    return GaussianCorrection(mean, cov)


def terrain_outputs(model: GpModel, terrain: int) -> tuple[int, int]:
    """Output columns ``(delta_v, delta_omega)`` for a terrain index."""
    return 2 * terrain, 2 * terrain + 1


def per_terrain_predictions(model: GpModel, query) -> tuple[np.ndarray, np.ndarray]:
    """Split one query's predictions into ``(M, 2)`` means and ``(M, 2, 2)`` diagonal covariances."""
    m, v = predict(model, query)
    M = model.n_outputs // 2
    covs = np.zeros((M, 2, 2))
    covs[:, 0, 0] = v[0::2]
    covs[:, 1, 1] = v[1::2]
    return m.reshape(M, 2), covs


# ---------------------------------------------------- hyperparameter search


def _base_lengthscales(inputs: np.ndarray) -> np.ndarray:
    sd = inputs.std(axis=0)
    return np.where(sd > 1e-12, sd, 1.0)


def log_marginal_likelihood(inputs: np.ndarray, y: np.ndarray, k: KernelParams) -> float:
    K = k.signal_var * correlation(inputs, inputs, k.lengthscales)
    K[np.diag_indices_from(K)] += k.noise_var
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return -np.inf
    a = cho_solve((L, True), y)
    n = y.shape[0]
    return float(-0.5 * y @ a - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi))


def _log_grid(center: float, step: float, count: int) -> np.ndarray:
    half = (count - 1) / 2
    return center * np.exp(step * (np.arange(count) - half))


def select_kernel(inputs: np.ndarray, y: np.ndarray, *, sizes=(5, 7, 5)) -> KernelParams:
    """Log-grid maximum-likelihood search over (signal var, lengthscale scale, noise var).

    One coarse pass then one refinement pass at half the log step around the
    best coarse point. Deterministic.
    """
    inputs = np.asarray(inputs, dtype=float)
    y = np.asarray(y, dtype=float)
    base = _base_lengthscales(inputs)
    vy = max(float(np.var(y)), 1e-12)
    steps = np.array([np.log(2.0), np.log(2.0), np.log(10.0)])
    centers = np.array([vy, 1.0, 1e-2 * vy])

    def search(centers, steps, sizes):
        best, best_p = -np.inf, None
        grids = [_log_grid(c, s, n) for c, s, n in zip(centers, steps, sizes)]
        for sf, sc, sn in itertools.product(*grids):
            p = KernelParams(sf, tuple(base * sc), sn)
            ll = log_marginal_likelihood(inputs, y, p)
            if ll > best:
                best, best_p = ll, (sf, sc, sn)
        return np.array(best_p)

    coarse = search(centers, steps, sizes)
    fine = search(coarse, steps / 2, (3, 3, 3))
    return KernelParams(fine[0], tuple(base * fine[1]), fine[2])


def _profiled_group_ll(inputs: np.ndarray, Y: np.ndarray, ls: np.ndarray, ratio: float) -> tuple[float, np.ndarray]:
    A = correlation(inputs, inputs, ls)
    A[np.diag_indices_from(A)] += ratio
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return -np.inf, None
    n = Y.shape[0]
    quad = np.einsum("ij,ij->j", Y, cho_solve((L, True), Y))
    scale = np.maximum(quad / n, 1e-300)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    ll = -0.5 * n * np.log(scale) - 0.5 * logdet - 0.5 * n * (1 + np.log(2 * np.pi))
    return float(ll.sum()), scale


def select_shared_kernels(inputs: np.ndarray, outputs: np.ndarray, *, sizes=(7, 5)) -> tuple[KernelParams, ...]:
    """Grid search with lengthscales and noise ratio tied across outputs.

    Each output's signal variance is profiled out in closed form
    (``y^T A^{-1} y / n``), so the search runs over (lengthscale scale, noise
    ratio) only and the result forms a single factor group.
    """
    inputs = np.asarray(inputs, dtype=float)
    Y = np.asarray(outputs, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    base = _base_lengthscales(inputs)
    steps = np.array([np.log(2.0), np.log(10.0)])

    def search(centers, steps, sizes):
        best, best_p = -np.inf, None
        for sc, rho in itertools.product(*(_log_grid(c, s, n) for c, s, n in zip(centers, steps, sizes))):
            ll, scale = _profiled_group_ll(inputs, Y, base * sc, rho)
            if ll > best:
                best, best_p = ll, (sc, rho, scale)
        return best_p

    sc, rho, _ = search(np.array([1.0, 1e-2]), steps, sizes)
    sc, rho, scale = search(np.array([sc, rho]), steps / 2, (3, 3))
    ls = tuple(base * sc)
    return tuple(KernelParams(float(s), ls, float(s * rho)) for s in scale)


def fit_auto(inputs: np.ndarray, outputs: np.ndarray, *, shared: bool = True) -> GpModel:
    """Select hyperparameters by grid search, then :func:`fit`."""
    outputs = np.asarray(outputs, dtype=float)
    if outputs.ndim == 1:
        outputs = outputs[:, None]
    if shared:
        kernels = select_shared_kernels(inputs, outputs)
    else:
        kernels = tuple(select_kernel(inputs, outputs[:, j]) for j in range(outputs.shape[1]))
    return fit(inputs, outputs, kernels)


# ------------------------------------------------------------- persistence


def save(model: GpModel, path: str | Path) -> None:
    """Store the training record; :func:`load` refits it deterministically."""
    np.savez(
        path,
        inputs=model.inputs,
        outputs=model.outputs,
        kernels=np.stack([k.as_array() for k in model.kernels]),
    )


def load(path: str | Path) -> GpModel:
    with np.load(path) as f:
        kernels = [KernelParams.from_array(row) for row in f["kernels"]]
        return fit(f["inputs"], f["outputs"], kernels)


# ---------------------------------------------------------- rollout path


class EnsembleEvaluator:
    """Terrain-weighted mean and diagonal covariance for many queries at once.

    The triangular inverse and scaled training inputs are prepared once per
    model; :meth:`reweight` swaps the terrain weights without redoing them.
    ``dtype=np.float32`` trades precision for roughly twice the throughput;
    the float64 variant agrees with :func:`predict_batch` +
    :func:`ensemble_combine` to rounding.
    """

    def __init__(self, model: GpModel, weights: TerrainWeights | np.ndarray | None = None,
                 dtype=np.float64, blocks: int = 3):
        self.model = model
        self.M = model.n_outputs // 2
        self.dtype = np.dtype(dtype)
        self._static = []
        for g in model.groups:
            ls = g.lengthscales
            xs = model.inputs / ls
            linv = solve_triangular(g.chol, np.eye(model.n), lower=True)
            n = model.n
            edges = np.linspace(0, n, max(1, min(blocks, n)) + 1).astype(int)
            rhs = [(i1, np.ascontiguousarray(linv[i0:i1, :i1].T, dtype=self.dtype))
                   for i0, i1 in zip(edges[:-1], edges[1:])]
            self._static.append(dict(
                group=g,
                inv_ls=(1.0 / ls).astype(self.dtype),
                xs_t=np.ascontiguousarray(xs.T, dtype=self.dtype),
                half_xsq=(0.5 * (xs**2).sum(1)).astype(self.dtype),
                rhs=rhs,
            ))
        self._parts: list[tuple[dict, np.ndarray, np.ndarray]] = []
        self.reweight(TerrainWeights.uniform(self.M) if weights is None else weights)

    def reweight(self, weights: TerrainWeights | np.ndarray) -> "EnsembleEvaluator":
        """Fold a new weight vector into the mean and variance coefficients (in place)."""
        w = weights.w if isinstance(weights, TerrainWeights) else np.asarray(weights, dtype=float)
        if w.size != self.M:
            raise ValueError(f"model has {self.M} terrains, got {w.size} weights")
        parts = []
        for st in self._static:
            g = st["group"]
            idx = np.array(g.outputs)
            wt = w[idx // 2]
            is_v = idx % 2 == 0
            # Column 0 -> delta_v, column 1 -> delta_omega.
            mean_w = np.zeros((len(idx), 2))
            mean_w[is_v, 0] = wt[is_v]
            mean_w[~is_v, 1] = wt[~is_v]
            sig = np.array([self.model.kernels[j].signal_var for j in idx])
            var_scale = np.array([(wt**2 * sig)[is_v].sum(), (wt**2 * sig)[~is_v].sum()])
            parts.append((st, (g.beta @ mean_w).astype(self.dtype), var_scale))
        self._parts = parts
        self.weights = w.copy()
        return self

    def __call__(self, queries: np.ndarray, with_variance: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Return ensemble means ``(S, 2)`` and variances ``(S, 2)`` (``C_vv``, ``C_ww``)."""
        queries = np.asarray(queries)
        S = queries.shape[0]
        mean = np.zeros((S, 2))
        var = np.zeros((S, 2))
        for st, mean_rhs, var_scale in self._parts:
            qs = queries.astype(self.dtype) * st["inv_ls"]
            r = qs @ st["xs_t"]
            r -= st["half_xsq"]
            r -= 0.5 * np.einsum("ij,ij->i", qs, qs)[:, None]
            np.minimum(r, 0.0, out=r)
            np.exp(r, out=r)
            mean += r @ mean_rhs
            if not with_variance:
                continue
            quad = np.zeros(S, dtype=self.dtype)
            for i1, rhs in st["rhs"]:
                v = r[:, :i1] @ rhs
                quad += np.einsum("ij,ij->i", v, v)
            q = np.maximum(1.0 - quad.astype(float), 0.0)
            var += q[:, None] * var_scale
        return mean, var
