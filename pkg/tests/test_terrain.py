import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gpmppi.core import Control, RobotState, TerrainWeights
from gpmppi.dynamics import NominalParams, step_nominal
from gpmppi.gp import KernelParams, fit, predict
from gpmppi.terrain import (HistoryBuffer, WeightSolverConfig, per_terrain_mean_prediction, project_simplex,
                            push_observation, solve_weights, solve_weights_detailed, weight_objective)

from .oracles import grid_objective_min


def random_buffer(rng, H=20, M=3):
    buf = HistoryBuffer(H, M)
    true = rng.dirichlet(np.ones(M))
    for _ in range(H):
        F = rng.normal(size=(M, 2))
        buf = buf.push(F.T @ true + 0.05 * rng.normal(size=2), F)
    return buf


class TestBuffer:
    def test_first_push(self):
        assert len(push_observation(HistoryBuffer(5, 3), (1.0, 0.0), np.zeros((3, 2)))) == 1

    def test_ring_drops_oldest(self):
        buf = HistoryBuffer(4, 2)
        for i in range(5):
            buf = buf.push((float(i), 0.0), np.zeros((2, 2)))
        assert len(buf) == 4 and list(buf.Y_v) == [1.0, 2.0, 3.0, 4.0]

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            HistoryBuffer(4, 3).push((0, 0), np.zeros((2, 2)))

    def test_push_is_persistent(self):
        a = HistoryBuffer(3, 1)
        a.push((1, 1), np.zeros((1, 2)))
        assert len(a) == 0


class TestProjectSimplex:
    def test_on_simplex_is_fixed(self):
        z = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(project_simplex(z), z, atol=1e-15)

    def test_vertex(self):
        np.testing.assert_array_equal(project_simplex([2.0, 0.0, 0.0]), [1.0, 0.0, 0.0])

    def test_symmetric(self):
        np.testing.assert_allclose(project_simplex([0.5, 0.5, 0.5]), [1 / 3] * 3, atol=1e-15)

    @settings(max_examples=300)
    @given(arrays(float, st.integers(1, 6), elements=st.floats(-10, 10)))
    def test_feasible_and_optimal(self, z):
        w = project_simplex(z)
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12
        # KKT: positive coordinates share one shift, zero coordinates are at or below it
        shift = z - w
        pos = w > 1e-12
        assert np.ptp(shift[pos]) < 1e-9
        assert np.all(z[~pos] <= shift[pos][0] + 1e-9)

    @given(arrays(float, 3, elements=st.floats(-5, 5)))
    def test_idempotent(self, z):
        w = project_simplex(z)
        np.testing.assert_allclose(project_simplex(w), w, atol=1e-12)


class TestSolver:
    def test_exact_column_recovered(self, rng):
        buf = HistoryBuffer(20, 3)
        for _ in range(20):
            F = rng.normal(size=(3, 2))
            buf = buf.push(F[1], F)
        w = solve_weights(buf, TerrainWeights.uniform(3), WeightSolverConfig(gamma=0.0))
        np.testing.assert_allclose(w.w, [0, 1, 0], atol=1e-3)

    def test_identical_columns_keep_prev(self, rng):
        buf = HistoryBuffer(10, 3)
        for _ in range(10):
            f = rng.normal(size=2)
            buf = buf.push(f + 0.1, np.stack([f] * 3))
        prev = TerrainWeights(np.array([0.1, 0.6, 0.3]))
        np.testing.assert_allclose(solve_weights(buf, prev).w, prev.w, atol=1e-12)

    def test_large_gamma_keeps_prev(self, rng):
        prev = TerrainWeights(np.array([0.5, 0.25, 0.25]))
        w = solve_weights(random_buffer(rng), prev, WeightSolverConfig(gamma=1e6))
        np.testing.assert_allclose(w.w, prev.w, atol=1e-9)

    def test_empty_buffer_flagged(self):
        prev = TerrainWeights.uniform(3)
        sol = solve_weights_detailed(HistoryBuffer(5, 3), prev)
        assert sol.empty and sol.weights is prev

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_grid_oracle(self, seed):
        rng = np.random.default_rng(seed)
        buf = random_buffer(rng)
        prev = TerrainWeights(rng.dirichlet(np.ones(3)))
        sol = solve_weights_detailed(buf, prev)
        oracle = grid_objective_min(buf.Y_v, buf.Y_omega, buf.F_v, buf.F_omega, prev.w, 0.1)
        assert sol.objective <= oracle + 1e-6
        assert abs(sol.weights.w.sum() - 1) < 1e-9 and sol.weights.w.min() >= 0

    def test_never_worse_than_prev(self, rng):
        for _ in range(20):
            buf = random_buffer(rng)
            prev = TerrainWeights(rng.dirichlet(np.ones(3)))
            sol = solve_weights_detailed(buf, prev)
            assert sol.objective <= weight_objective(buf, prev.w, prev.w, 0.1) + 1e-12
            assert all(b <= a for a, b in zip(sol.trace, sol.trace[1:]))

    def test_permutation_equivariant(self, rng):
        buf = random_buffer(rng)
        prev = TerrainWeights(np.array([0.2, 0.3, 0.5]))
        perm = np.array([2, 0, 1])
        pbuf = HistoryBuffer(buf.capacity, 3, buf.Y, buf.F[:, perm, :])
        a = solve_weights(buf, prev).w
        b = solve_weights(pbuf, TerrainWeights(prev.w[perm])).w
        np.testing.assert_allclose(b, a[perm], atol=1e-6)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            WeightSolverConfig(gamma=-1)


class TestPerTerrainPrediction:
    def test_zero_residual_models_equal_nominal(self):
        X = np.random.default_rng(0).normal(size=(5, 4))
        gp = fit(X, np.zeros((5, 6)), KernelParams(1.0, (1.0,) * 4, 0.1))
        P = NominalParams()
        s, u = RobotState(0, 0, 0, 1.0, 0.2), Control(1.5, 0.5)
        nom = step_nominal(s, u, P)
        out = per_terrain_mean_prediction(gp, s, u, P)
        np.testing.assert_allclose(out, np.tile([nom.v, nom.omega], (3, 1)), atol=1e-15)

    def test_single_model(self, rng):
        X = rng.normal(size=(8, 4))
        gp = fit(X, rng.normal(size=(8, 2)), KernelParams(1.0, (1.0,) * 4, 0.1))
        P = NominalParams()
        s, u = RobotState(0, 0, 0, 0.5, -0.1), Control(1.0, 0.0)
        nom = step_nominal(s, u, P)
        m, _ = predict(gp, [s.v, s.omega, u.v_ref, u.omega_ref])
        out = per_terrain_mean_prediction([gp], s, u, P)
        np.testing.assert_allclose(out[0], [nom.v + m[0], nom.omega + m[1]], atol=1e-15)
