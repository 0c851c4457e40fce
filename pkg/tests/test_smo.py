import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from smoattack.errors import DimensionMismatch, SingularD2
from smoattack.filters import lowpass_init, lowpass_step
from smoattack.model import LinearPlant, build_wecc
from smoattack.smo import (AdaptiveGain, SmoConfig, adapt_gain, attack_filter_step, design_smo,
                           injection, smo_estimates, smo_init, smo_step)
from smoattack.transforms import build_chain

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@pytest.fixture(scope="module")
def wecc_design():
    plant = build_wecc(plant_attack=False, sensor_attack="identity")
    chain = build_chain(plant)
    design = design_smo(chain, SmoConfig(rho=20, eta=0.5, tau_f=0.005, filter_order=2))
    return plant, chain, design


class TestInjection:
    def test_unit_vector(self):
        assert np.allclose(injection(np.array([3.0, 4.0]), 5.0), [-3.0, -4.0])

    def test_origin(self):
        assert np.array_equal(injection(np.zeros(3), 5.0), np.zeros(3))

    @given(arrays(float, 3, elements=finite), st.floats(0.1, 100))
    def test_norm_equals_gain(self, e, gain):
        if np.linalg.norm(e) > 1e-6:
            assert np.linalg.norm(injection(e, gain)) == pytest.approx(gain, rel=1e-12)

    def test_negative_gain(self):
        with pytest.raises(ValueError):
            injection(np.ones(2), -1.0)


class TestDesign:
    def test_filter_is_hurwitz(self, wecc_design):
        _, _, design = wecc_design
        assert np.max(design.filter_poles.real) < 0

    def test_needs_sensor_attacks(self):
        A = np.array([[-1.0, 0.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])
        plant = LinearPlant(A=A, B1=np.zeros((3, 0)), C=np.eye(3)[1:], D1=np.zeros((2, 0)))
        with pytest.raises(SingularD2):
            design_smo(build_chain(plant))

    def test_bad_gain_matrices(self, wecc_design):
        _, chain, _ = wecc_design
        with pytest.raises(ValueError):
            design_smo(chain, SmoConfig(A33s=np.eye(3)))
        with pytest.raises(DimensionMismatch):
            design_smo(chain, SmoConfig(A33s=-np.eye(2)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SmoConfig(eta=0.0)
        with pytest.raises(ValueError):
            AdaptiveGain(alpha=1.0)
        with pytest.raises(ValueError):
            AdaptiveGain(epsilon=0.1, sigma0=0.1, a1=1.0)


class TestObserver:
    def test_exact_initialization_stays_exact(self, wecc_design):
        plant, chain, design = wecc_design
        dt = 1e-4
        x = np.random.default_rng(0).normal(scale=0.1, size=6)
        state = smo_init(design, z0=chain.to_bar(x), dt=dt)
        worst = 0.0
        for _ in range(10_000):
            y1, y2 = chain.scale_output(plant.output(x, np.zeros(3)))
            state = smo_step(state, design, y1, y2, dt)
            x = x + dt * plant.derivative(x)
            worst = max(worst, np.max(np.abs(state.z - chain.to_bar(x))))
        assert worst < 1e-8

    def test_reaching_is_monotone_then_banded(self, wecc_design):
        plant, chain, design = wecc_design
        dt, gain = 1e-4, 20.5
        band = 10 * dt * gain
        x = 0.05 * np.ones(6)
        state = smo_init(design, dt=dt)
        k3 = sum(chain.sizes[:2])
        prev, entered = np.inf, None
        for k in range(20_000):
            y1, y2 = chain.scale_output(plant.output(x, np.zeros(3)))
            e = np.linalg.norm(y2 - state.z[k3:])
            if entered is None:
                assert e <= prev + 1e-15
                if e <= band:
                    entered = k
            else:
                assert e <= band
            prev = e
            state = smo_step(state, design, y1, y2, dt)
            x = x + dt * plant.derivative(x)
        assert entered is not None and entered * dt < 0.1

    def test_dimension_mismatch(self, wecc_design):
        _, _, design = wecc_design
        state = smo_init(design)
        with pytest.raises(DimensionMismatch):
            smo_step(state, design, np.zeros(2), np.zeros(3), 1e-4)


class TestReconstructionFilter:
    def test_lowpass_reaches_99_percent(self):
        tau, dt = 0.01, 1e-4
        f = lowpass_init(2, tau, 1)
        v = np.array([1.0, -2.0])
        for _ in range(int(round(5 * tau / dt))):
            f = lowpass_step(f, v, dt)
        assert np.all(np.abs(f.output) >= 0.99 * np.abs(v))

    def test_zero_input(self, wecc_design):
        _, _, design = wecc_design
        w = np.zeros(6)
        for _ in range(100):
            w, d_hat = attack_filter_step(design, w, np.zeros(3), 1e-3)
            assert np.all(d_hat == 0.0)

    def test_dc_gain(self, wecc_design):
        _, _, design = wecc_design
        v0 = np.array([0.3, -1.0, 2.0])
        # oracle: steady state of w' = A* w + B* v0 from an independent solve
        w_ss = np.linalg.lstsq(design.A_star, -design.B_star @ v0, rcond=None)[0]
        expected = design.C_star @ w_ss
        assert np.allclose(design.dc_gain() @ v0, expected, atol=1e-10)
        w, dt = np.zeros(6), 1e-3
        for _ in range(20_000):
            w, d_hat = attack_filter_step(design, w, v0, dt)
        assert np.allclose(d_hat, expected, atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(arrays(float, 6, elements=st.floats(-10, 10)), arrays(float, 3, elements=st.floats(-10, 10)),
           arrays(float, 6, elements=st.floats(-10, 10)), arrays(float, 3, elements=st.floats(-10, 10)))
    def test_superposition(self, w1, v1, w2, v2):
        plant = build_wecc(plant_attack=False, sensor_attack="identity")
        design = design_smo(build_chain(plant))
        a, da = attack_filter_step(design, w1, v1, 1e-3)
        b, db = attack_filter_step(design, w2, v2, 1e-3)
        c, dc = attack_filter_step(design, w1 + w2, v1 + v2, 1e-3)
        assert np.allclose(a + b, c, rtol=0, atol=1e-12)
        assert np.allclose(da + db, dc, rtol=0, atol=1e-12)

    def test_estimates_from_state(self, wecc_design):
        _, chain, design = wecc_design
        state = smo_init(design)
        x_hat, d_hat = smo_estimates(state, design)
        assert np.all(x_hat == 0.0) and np.all(d_hat == 0.0)


class TestAdaptiveGain:
    def params(self):
        return AdaptiveGain(alpha=0.9, epsilon=1.0, sigma0=0.1, gamma=20.0, ell0=100.0, rho_init=1.0)

    def test_inside_sigma0_keeps_ell(self, wecc_design):
        _, _, design = wecc_design
        p = self.params()
        # sigma = rho - |v|/alpha - eps = 0.05
        state = smo_init(design)
        state = state.__class__(**{**state.__dict__, "rho_t": 1.05, "ell_t": 3.0})
        new = adapt_gain(state, p, np.zeros(3), 1e-3)
        assert new.ell_t == 3.0
        assert new.sigma == pytest.approx(0.05)

    def test_positive_sigma_lowers_rho_raises_ell(self, wecc_design):
        _, _, design = wecc_design
        p = self.params()
        state = smo_init(design)
        state = state.__class__(**{**state.__dict__, "rho_t": 5.0, "ell_t": 2.0})
        dt = 1e-4
        new = adapt_gain(state, p, np.zeros(3), dt)
        sigma = 5.0 - 1.0
        assert new.rho_t == pytest.approx(5.0 - dt * (100.0 + 2.0))
        assert new.ell_t == pytest.approx(2.0 + 20.0 * sigma * dt)

    def test_rho_never_negative(self, wecc_design):
        _, _, design = wecc_design
        state = smo_init(design)
        # sigma = 0.5 > 0 and a unit step would overshoot below zero
        state = state.__class__(**{**state.__dict__, "rho_t": 1.5})
        new = adapt_gain(state, self.params(), np.zeros(3), 1.0)
        assert new.rho_t == 0.0


@pytest.mark.slow
class TestWeccRuns:
    def test_fixed_gain_reconstruction(self, smo_fixed_run):
        _, m = smo_fixed_run
        assert all(v < 0.10 for v in m.dy_rel_rmse)
        assert m.reaching_time["smo"] is not None

    def test_adaptive_gain_bounded(self, smo_adaptive_run):
        _, m = smo_adaptive_run
        assert m.gains["max_smo_rho"] < 1e3 and m.gains["max_smo_r"] < 1e3
        assert m.gains["ell_nondecreasing"]
        assert m.gains["sigma_entry_time"] is not None

    def test_fixed_and_adaptive_agree(self, smo_fixed_run, smo_adaptive_run):
        tf, _ = smo_fixed_run
        ta, _ = smo_adaptive_run
        mask = tf.t >= 2.0
        truth = tf.group("dy_true")[mask]
        diff = tf.group("dy_hat")[mask] - ta.group("dy_hat")[mask]
        rel = np.sqrt(np.mean(diff ** 2, axis=0)) / np.sqrt(np.mean(truth ** 2, axis=0))
        assert np.all(rel < 0.15)
