import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpmppi.core import BeliefState, Control, GaussianCorrection
from gpmppi.costs import CircleObstacle
from gpmppi.dynamics import NominalParams
from gpmppi.uncertainty import (QuantileTables, chi2_quantile_2dof, lane_radii, max_eig_2x2, normal_quantile,
                                obstacle_margins, propagate_belief, tighten_lane_radius, tighten_obstacle_distance)

from .oracles import bisect_quantile

Q95 = QuantileTables.for_probability(0.95)
P = NominalParams()


def random_psd(rng, scale=0.05):
    A = rng.normal(size=(2, 2)) * scale
    return A @ A.T


class TestQuantiles:
    @pytest.mark.parametrize("p,expected", [(0.0, 0.0), (0.5, 1.3862943611198906), (0.95, 5.991464547107979)])
    def test_chi2_examples(self, p, expected):
        assert chi2_quantile_2dof(p) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_chi2_domain(self, p):
        with pytest.raises(ValueError):
            chi2_quantile_2dof(p)

    def test_normal_median(self):
        assert normal_quantile(0.5) == 0.0

    def test_normal_975(self):
        assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-9)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.2])
    def test_normal_domain(self, p):
        with pytest.raises(ValueError):
            normal_quantile(p)

    @settings(max_examples=100)
    @given(st.floats(0.001, 0.999))
    def test_normal_vs_bisection(self, p):
        assert normal_quantile(p) == pytest.approx(bisect_quantile(p), abs=1e-8)

    @given(st.floats(1e-6, 0.5 - 1e-6))
    def test_normal_antisymmetric(self, p):
        assert normal_quantile(p) == pytest.approx(-normal_quantile(1 - p), abs=1e-9)

    def test_tables_domain(self):
        with pytest.raises(ValueError):
            QuantileTables.for_probability(0.4)


class TestPropagation:
    def test_deterministic_stays_deterministic(self):
        b = BeliefState(np.array([0, 0, 0.2, 1.0, 0.3]), np.zeros((5, 5)))
        out = propagate_belief(b, Control(1, 0), GaussianCorrection(np.zeros(2), np.zeros((2, 2))), P)
        assert np.all(out.cov == 0)

    def test_additive_noise_only(self):
        b = BeliefState(np.array([0, 0, 0.2, 1.0, 0.3]), np.zeros((5, 5)))
        out = propagate_belief(b, Control(1, 0), GaussianCorrection(np.zeros(2), np.diag([0.01, 0.02])), P)
        expected = np.zeros((5, 5))
        expected[3, 3], expected[4, 4] = 0.01, 0.02
        np.testing.assert_array_equal(out.cov, expected)

    def test_mean_includes_correction(self):
        b = BeliefState(np.zeros(5), np.zeros((5, 5)))
        out = propagate_belief(b, Control(2, 0), GaussianCorrection(np.array([0.1, -0.2]), np.zeros((2, 2))), P)
        assert out.mean[3] == pytest.approx(0.2 + 0.1) and out.mean[4] == pytest.approx(-0.2)

    def test_psd_over_long_chains(self, rng):
        for _ in range(10):
            b = BeliefState(np.array([0, 0, rng.uniform(-3, 3), rng.uniform(0, 2), rng.uniform(-1, 1)]),
                            np.zeros((5, 5)))
            for _ in range(50):
                c = GaussianCorrection(rng.normal(size=2) * 0.01, np.diag(rng.uniform(0, 1e-3, 2)))
                b = propagate_belief(b, Control(rng.uniform(-0.5, 2), rng.uniform(-2, 2)), c, P)
                assert np.linalg.eigvalsh(b.cov).min() >= -1e-10


class TestLaneTightening:
    def test_zero_cov(self):
        assert tighten_lane_radius(0.5, np.zeros((2, 2)), Q95) == 0.5

    def test_isotropic(self):
        assert tighten_lane_radius(0.5, 0.01 * np.eye(2), Q95) == pytest.approx(0.5 - 0.24477468, abs=1e-8)

    def test_diagonal_uses_largest_eigenvalue(self):
        r = tighten_lane_radius(0.5, np.diag([0.02, 0.01]), Q95)
        assert r == pytest.approx(0.5 - math.sqrt(5.991464547107979 * 0.02), abs=1e-12)

    def test_infeasible_signalled_by_nonpositive(self):
        assert tighten_lane_radius(0.1, np.eye(2), Q95) <= 0

    def test_max_eig_matches_numpy(self, rng):
        C = np.stack([random_psd(rng, 1.0) for _ in range(100)])
        np.testing.assert_allclose(max_eig_2x2(C), np.linalg.eigvalsh(C)[:, -1], atol=1e-12)

    def test_vectorised_matches_scalar(self, rng):
        C = np.stack([random_psd(rng) for _ in range(30)])
        np.testing.assert_allclose(lane_radii(0.5, C, Q95), [tighten_lane_radius(0.5, c, Q95) for c in C], atol=1e-15)

    def test_monotone_under_inflation(self, rng):
        for _ in range(200):
            C, D = random_psd(rng), random_psd(rng)
            assert tighten_lane_radius(0.5, C + D, Q95) <= tighten_lane_radius(0.5, C, Q95) + 1e-15


class TestObstacleTightening:
    def test_zero_cov(self):
        t = tighten_obstacle_distance([2.0, 0.0], CircleObstacle((0.0, 0.0), 0.5), np.zeros((2, 2)), Q95)
        assert t.d_bar == t.d == 1.5 and t.collision_free

    @given(st.floats(-math.pi, math.pi), st.floats(0.001, 0.1))
    def test_isotropic_any_direction(self, ang, sigma):
        xy = [3 * math.cos(ang), 3 * math.sin(ang)]
        t = tighten_obstacle_distance(xy, CircleObstacle((0.0, 0.0), 1.0), sigma**2 * np.eye(2), Q95)
        assert t.d_bar == pytest.approx(t.d - Q95.z * sigma, abs=1e-12)
        assert np.linalg.norm(t.n) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_at_center(self):
        t = tighten_obstacle_distance([1.0, 1.0], CircleObstacle((1.0, 1.0), 0.3), np.eye(2) * 0.01, Q95)
        assert t.degenerate and list(t.n) == [1.0, 0.0] and not t.collision_free

    def test_direction_selects_variance(self):
        cov = np.diag([0.04, 0.0])
        along = tighten_obstacle_distance([2, 0], CircleObstacle((0, 0), 1), cov, Q95)
        across = tighten_obstacle_distance([0, 2], CircleObstacle((0, 0), 1), cov, Q95)
        assert along.margin == pytest.approx(Q95.z * 0.2) and across.margin == 0.0

    def test_monotone_under_inflation(self, rng):
        for _ in range(200):
            C, D = random_psd(rng), random_psd(rng)
            xy, ob = rng.normal(size=2) * 3, CircleObstacle(tuple(rng.normal(size=2)), 0.5)
            assert (tighten_obstacle_distance(xy, ob, C + D, Q95).d_bar
                    <= tighten_obstacle_distance(xy, ob, C, Q95).d_bar + 1e-15)

    def test_margins_batch(self, rng):
        pos = rng.normal(size=(6, 2)) * 3
        cov = np.stack([random_psd(rng) for _ in range(6)])
        centers = rng.normal(size=(2, 2))
        M = obstacle_margins(pos, cov, centers, Q95)
        for i in range(6):
            for o in range(2):
                ref = tighten_obstacle_distance(pos[i], CircleObstacle(tuple(centers[o]), 0.4), cov[i], Q95)
                assert M[i, o] == pytest.approx(ref.margin, abs=1e-14)

    def test_margins_no_obstacles(self):
        assert obstacle_margins(np.zeros((4, 2)), np.zeros((4, 2, 2)), np.zeros((0, 2)), Q95).shape == (4, 0)
