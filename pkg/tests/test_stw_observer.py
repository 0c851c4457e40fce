import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from smoattack.errors import DimensionMismatch, InvalidPoles, RankDeficientCaB, SingularDbar
from smoattack.model import WECC_D_OMEGA, build_wecc
from smoattack.stw_observer import (SuperTwistCell, cascade_init, cascade_step, design_stw,
                                    reconstruct_dx, reconstruct_dy, stw_init, stw_observe_step,
                                    stw_step, supertwist_gains)


@pytest.fixture(scope="module")
def wecc():
    plant = build_wecc()
    design = design_stw(plant.A, plant.B1, plant.C1, rho_c=200, L_b=[10, 40, 100], tau_f=0.005,
                        filter_order=2)
    return plant, design


class TestCell:
    def test_output_formula(self):
        cell = SuperTwistCell(np.array([1.0]), np.array([2.0]), np.array([3.0]))
        new, nu = stw_step(cell, np.array([4.0]), 0.1)
        assert nu[0] == 5.0
        assert new.xi[0] == pytest.approx(1.3)

    def test_negative_error(self):
        cell = SuperTwistCell(np.array([0.0]), np.array([2.0]), np.array([1.0]))
        _, nu = stw_step(cell, np.array([-9.0]), 0.1)
        assert nu[0] == -6.0

    def test_gains(self):
        lam, beta = supertwist_gains(4.0)
        assert (lam, beta) == (3.0, pytest.approx(4.4))
        with pytest.raises(ValueError):
            supertwist_gains(0.0)
        with pytest.raises(ValueError):
            SuperTwistCell(np.zeros(1), np.zeros(1), np.ones(1))


class TestCascade:
    def run(self, signal, r_alpha, L_b, T=2.0, dt=1e-4):
        c = cascade_init(r_alpha, L_b=L_b, y0=np.atleast_1d(signal(0.0)))
        out = []
        for k in range(int(round(T / dt))):
            c, y_a = cascade_step(c, np.atleast_1d(signal(k * dt)), dt)
            out.append(y_a)
        return np.array(out), dt

    def test_relative_degree_one_passes_outputs(self):
        c = cascade_init((1, 1))
        assert c.depth == 0
        c, y_a = cascade_step(c, np.array([0.3, -0.7]), 1e-3)
        assert np.array_equal(y_a, [0.3, -0.7])

    def test_ramp_derivative(self):
        y_a, _ = self.run(lambda t: t, (2,), L_b=1.0)
        assert abs(y_a[-1, 1] - 1.0) < 1e-3

    def test_sine_derivative(self):
        y_a, dt = self.run(np.sin, (2,), L_b=2.0)
        t = np.arange(len(y_a)) * dt
        mask = t >= 1.0
        assert np.max(np.abs(y_a[mask, 1] - np.cos(t[mask]))) < 1e-2

    def test_interleaved_layout(self):
        c = cascade_init((2, 1, 3))
        assert c.depth == 2
        c, y_a = cascade_step(c, np.array([1.0, 2.0, 3.0]), 1e-4)
        assert y_a.size == 6
        assert (y_a[0], y_a[2], y_a[3]) == (1.0, 2.0, 3.0)

    def test_deeper_stage_waits(self):
        c = cascade_init((3,), y0=np.array([5.0]))
        assert not c.E[1][0]
        c, _ = cascade_step(c, np.array([0.0]), 1e-4)
        assert not c.E[1][0]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cascade_step(cascade_init((2, 2)), np.zeros(3), 1e-4)


class TestDesign:
    def test_lyapunov_matrix(self, wecc):
        _, d = wecc
        assert np.allclose(d.P, d.P.T)
        assert np.min(np.linalg.eigvalsh(d.P)) > 0
        As = d.C_a @ (d.A - d.G_l @ d.C_a) @ np.linalg.pinv(d.C_a)
        assert np.allclose(As.T @ d.P + d.P @ As, -np.eye(6), atol=1e-10)

    def test_observer_poles(self, wecc):
        _, d = wecc
        eig = np.sort(np.linalg.eigvals(d.A - d.G_l @ d.C_a).real)
        assert np.allclose(eig, -3.0 - np.arange(6)[::-1], atol=1e-6)

    def test_least_squares_inverts_equivalent_injection(self, wecc):
        _, d = wecc
        rng = np.random.default_rng(2)
        for _ in range(5):
            dx = rng.normal(size=3)
            v_eq = -(d.C_a @ d.B) @ dx
            assert np.allclose(d.R_x @ v_eq, dx, atol=1e-12)

    def test_errors(self, wecc):
        plant, _ = wecc
        with pytest.raises(InvalidPoles):
            design_stw(plant.A, plant.B1, plant.C1, poles=np.ones(6))
        with pytest.raises(RankDeficientCaB):
            design_stw(-np.eye(2), np.eye(2), np.array([[1.0, 1.0]]))


class TestObserver:
    def test_injection_magnitude(self, wecc):
        plant, d = wecc
        st = stw_init(d, dt=1e-4)
        x = np.full(6, 0.1)
        st = stw_observe_step(st, d, plant.C1 @ x, 1e-4)
        assert np.linalg.norm(st.v_c) == pytest.approx(d.rho_c)

    def test_unattacked_error_in_chatter_band(self, wecc):
        plant, d = wecc
        dt = 1e-4
        x = np.random.default_rng(0).normal(scale=0.1, size=6)
        st = stw_init(d, y0=plant.C1 @ x, dt=dt)
        worst = 0.0
        for k in range(20_000):
            st = stw_observe_step(st, d, plant.C1 @ x, dt)
            x = x + dt * plant.derivative(x, np.zeros(3))
            if k * dt >= 1.0:
                worst = max(worst, np.linalg.norm(st.x_hat - x))
        # the explicit sliding injection moves x_hat by dt * rho_c per step
        assert worst < 10 * dt * d.rho_c
        assert np.linalg.norm(reconstruct_dx(st, d)) < 0.05

    def test_filter_time_check(self, wecc):
        _, d = wecc
        with pytest.warns(RuntimeWarning):
            stw_init(d, dt=0.01)


class TestSensorReconstruction:
    def test_square(self):
        D = np.array([[2.0, 0.0], [0.0, 4.0]])
        dy = reconstruct_dy([2.0, 8.0], np.zeros(2), D, np.eye(2))
        assert np.allclose(dy, [1.0, 2.0])

    @given(arrays(float, 6, elements=st.floats(-5, 5)), arrays(float, 6, elements=st.floats(-5, 5)))
    def test_wide_returns_residual(self, x, dy):
        C2 = np.eye(6)[3:]
        y2 = C2 @ x + WECC_D_OMEGA @ dy
        r = reconstruct_dy(y2, x, WECC_D_OMEGA, C2)
        assert np.allclose(r, WECC_D_OMEGA @ dy, atol=1e-12)

    def test_singular(self):
        with pytest.raises(SingularDbar):
            reconstruct_dy(np.zeros(2), np.zeros(2), np.ones((2, 2)), np.eye(2))


@pytest.mark.slow
class TestWeccRun:
    def test_residual_carries_channel_five(self, wecc_run):
        trace, _ = wecc_run
        i = int(np.argmin(np.abs(trace.t - 15.0)))
        r = trace.group("y")[i, 3:] - trace.group("xhat")[i, 3:]
        assert np.allclose(r, np.sin(trace.t[i]) * np.ones(3), rtol=0.1, atol=0.02)

    def test_state_estimate(self, wecc_run):
        _, m = wecc_run
        assert m.x_rel_rmse < 0.01
