import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpmppi.core import (BeliefState, Control, ControlSequence, GaussianCorrection, RobotState, TerrainWeights,
                         body_frame_displacement, body_frame_displacement_batch, wrap_angle, wrap_angles)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


class TestWrapAngle:
    def test_zero(self):
        assert wrap_angle(0.0) == 0.0

    def test_three_pi_maps_to_pi(self):
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi, abs=1e-12)

    def test_minus_pi_maps_to_plus_pi(self):
        assert wrap_angle(-math.pi) == math.pi

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValueError):
            wrap_angle(bad)

    @given(finite)
    def test_range_and_congruence(self, a):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        k = (a - w) / (2 * math.pi)
        assert abs(k - round(k)) < 1e-6

    @given(finite)
    def test_idempotent(self, a):
        assert wrap_angle(wrap_angle(a)) == wrap_angle(a)

    def test_vectorized_matches_scalar(self, rng):
        a = rng.uniform(-50, 50, 500)
        a[:3] = [-math.pi, math.pi, 3 * math.pi]
        np.testing.assert_allclose(wrap_angles(a), [wrap_angle(x) for x in a], atol=1e-12)


class TestBodyFrameDisplacement:
    def test_along_heading(self):
        assert body_frame_displacement(RobotState(0, 0, 0, 0, 0), RobotState(1, 0, 0, 0, 0)) == (1.0, 0.0)

    def test_rotated_heading(self):
        lon, lat = body_frame_displacement(RobotState(0, 0, math.pi / 2, 0, 0), RobotState(0, 1, 0, 0, 0))
        assert lon == pytest.approx(1.0, abs=1e-15)
        assert lat == pytest.approx(0.0, abs=1e-15)

    def test_pure_lateral(self):
        assert body_frame_displacement(RobotState(0, 0, 0, 0, 0), RobotState(0, 1, 0, 0, 0)) == (0.0, 1.0)

    @given(finite, finite, st.floats(-4, 4), finite, finite)
    def test_isometry(self, x0, y0, th, x1, y1):
        lon, lat = body_frame_displacement(RobotState(x0, y0, th, 0, 0), RobotState(x1, y1, 0, 0, 0))
        world = math.hypot(x1 - x0, y1 - y0)
        assert math.hypot(lon, lat) == pytest.approx(world, rel=1e-12, abs=1e-12)

    def test_batch_matches_scalar(self, rng):
        a, b = rng.normal(size=(50, 5)), rng.normal(size=(50, 5))
        lon, lat = body_frame_displacement_batch(a, b)
        for i in range(50):
            ref = body_frame_displacement(RobotState.from_array(a[i]), RobotState.from_array(b[i]))
            assert (lon[i], lat[i]) == pytest.approx(ref, abs=1e-12)


class TestTypes:
    def test_state_wraps_heading(self):
        assert RobotState(0, 0, 3 * math.pi, 0, 0).theta == pytest.approx(math.pi)

    def test_state_rejects_nan(self):
        with pytest.raises(ValueError):
            RobotState(0, math.nan, 0, 0, 0)

    def test_control_clamp(self):
        u = Control(3.0, -5.0).clamp(Control(-0.5, -2.0), Control(2.0, 2.0))
        assert (u.v_ref, u.omega_ref) == (2.0, -2.0)

    def test_sequence_is_read_only(self):
        seq = ControlSequence.constant(Control(1.0, 0.0), 4)
        assert seq.horizon == 4
        with pytest.raises(ValueError):
            seq.controls[0, 0] = 5.0

    def test_sequence_clamped_within(self):
        seq = ControlSequence(np.array([[3.0, 0.0], [-1.0, 3.0]]))
        lo, hi = Control(-0.5, -2.0), Control(2.0, 2.0)
        assert not seq.within(lo, hi)
        assert seq.clamped(lo, hi).within(lo, hi)

    def test_belief_rejects_asymmetric(self):
        cov = np.zeros((5, 5))
        cov[0, 1] = 1e-6
        with pytest.raises(ValueError):
            BeliefState(np.zeros(5), cov)

    def test_correction_rejects_negative_variance(self):
        with pytest.raises(ValueError):
            GaussianCorrection(np.zeros(2), np.diag([-1.0, 0.0]))

    @pytest.mark.parametrize("w", [[0.5, 0.6], [1.2, -0.2], [0.5, 0.5 + 1e-6]])
    def test_weights_off_simplex(self, w):
        with pytest.raises(ValueError):
            TerrainWeights(np.array(w))

    def test_weights_helpers(self):
        assert TerrainWeights.uniform(4).w.sum() == pytest.approx(1.0)
        assert list(TerrainWeights.vertex(3, 1).w) == [0.0, 1.0, 0.0]
