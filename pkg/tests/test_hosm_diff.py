import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smoattack.errors import UnsupportedOrder
from smoattack.hosm_diff import (GAIN_LADDER, default_gains, diff_step, differentiate_series,
                                 make_differentiator)


class TestGains:
    def test_first_order(self):
        lam = default_gains(1, 4.0)
        assert lam[0] == pytest.approx(1.5 * 2.0)
        assert lam[1] == pytest.approx(1.1 * 4.0)

    @pytest.mark.parametrize("order", range(1, 6))
    def test_lipschitz_scaling(self, order):
        # scaling L by s scales lam_i by s^(1/(k+1-i))
        a, b = default_gains(order, 1.0), default_gains(order, 4.0)
        expo = 1.0 / (order + 1 - np.arange(order + 1))
        assert np.allclose(b / a, 4.0 ** expo)
        assert np.allclose(a, [GAIN_LADDER[order - i] for i in range(order + 1)])

    def test_second_order_cube_root(self):
        lam = default_gains(2, 4.0)
        assert lam[0] == pytest.approx(2.0 * 4.0 ** (1 / 3))

    def test_unsupported(self):
        with pytest.raises(UnsupportedOrder):
            default_gains(6, 1.0)
        with pytest.raises(UnsupportedOrder):
            make_differentiator(0, 1.0)
        with pytest.raises(ValueError):
            default_gains(2, -1.0)

    def test_per_channel(self):
        lam = default_gains(2, np.array([1.0, 8.0]))
        assert lam.shape == (3, 2)


class TestTracking:
    def test_constant_is_equilibrium(self):
        z = differentiate_series(np.full(1000, 3.5), 1e-3, order=2, L_lip=1.0)
        assert np.all(z[:, 0] == 3.5) and np.all(z[:, 1:] == 0.0)

    def test_quadratic_second_order(self):
        dt = 1e-4
        t = np.arange(30_001) * dt
        z = differentiate_series(t ** 2, dt, order=2, L_lip=4.0)
        mask = t >= 1.0
        assert np.max(np.abs(z[mask, 1] - 2 * t[mask])) < 1e-3
        assert np.max(np.abs(z[mask, 2] - 2.0)) < 5e-3

    def test_sine_third_order(self):
        dt = 1e-4
        t = np.arange(40_001) * dt
        z = differentiate_series(np.sin(t), dt, order=3, L_lip=4.0)
        mask = t >= 3.0
        assert np.max(np.abs(z[mask, 1] - np.cos(t[mask]))) < 1e-3
        assert np.max(np.abs(z[mask, 2] + np.sin(t[mask]))) < 5e-3

    def test_error_shrinks_with_step(self):
        errs = []
        for dt in (2e-4, 1e-4):
            t = np.arange(int(round(3.0 / dt)) + 1) * dt
            z = differentiate_series(np.sin(t), dt, order=1, L_lip=2.0)
            mask = t >= 1.0
            errs.append(np.max(np.abs(z[mask, 1] - np.cos(t[mask]))))
        assert errs[0] / errs[1] >= 1.5

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-10, 10), st.floats(0.1, 5), st.integers(1, 5))
    def test_bounded_input_stays_finite(self, offset, amp, order):
        rng = np.random.default_rng(0)
        y = offset + amp * rng.uniform(-1, 1, size=500)
        z = differentiate_series(y, 1e-3, order=order, L_lip=1.0)
        assert np.all(np.isfinite(z))

    def test_bank_matches_single_channel(self):
        dt = 1e-3
        t = np.arange(500) * dt
        ys = np.column_stack([np.sin(t), t ** 2])
        d = make_differentiator(2, 1.0, first_sample=ys[0])
        for y in ys:
            d = diff_step(d, y, dt)
        for c in range(2):
            single = differentiate_series(np.append(ys[:, c], 0.0), dt, order=2, L_lip=1.0)
            assert np.array_equal(single[-1], d.z[:, c])

    def test_empty_series(self):
        assert differentiate_series([], 1e-3).shape == (0, 3)
