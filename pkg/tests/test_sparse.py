import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from smoattack.errors import DimensionMismatch, TooManySupports, ZeroDynamicsPresent
from smoattack.model import WECC_D_OMEGA, LinearPlant
from smoattack.sparse import (Dictionary, build_filtered_system, default_lambda, rip_check,
                              soft_threshold, sr_init, sr_rate, sr_solve, sr_step)

from oracles import lasso_cd, rip_sweep


def random_instance(seed, M=3, N=6):
    rng = np.random.default_rng(seed)
    Phi = rng.normal(size=(M, N))
    Phi /= np.linalg.norm(Phi, axis=0)
    s = np.zeros(N)
    s[rng.integers(N)] = rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
    return Phi, Phi @ s


class TestSoftThreshold:
    def test_values(self):
        assert np.array_equal(soft_threshold([3.0, -3.0, 0.5, -0.5], 1.0), [2.0, -2.0, 0.0, 0.0])

    @given(arrays(float, 5, elements=st.floats(-100, 100)), st.floats(0, 10))
    def test_shrinks(self, v, lam):
        a = soft_threshold(v, lam)
        assert np.all(np.abs(a) <= np.abs(v))
        assert np.all(np.abs(v - a) <= lam + 1e-12)
        assert np.all(a[np.abs(v) <= lam] == 0.0)


class TestDynamics:
    def test_identity_dictionary_equilibrium(self):
        # with Phi = I the bracket vanishes at v = xi
        xi = np.array([1.0, -0.3, 0.05])
        st_ = sr_init(3, lam=0.1, v0=xi)
        assert np.all(sr_rate(st_, np.eye(3), xi) == 0.0)
        assert np.allclose(st_.a, [0.9, -0.2, 0.0])

    def test_zero_measurement_stays_zero(self):
        Phi, _ = random_instance(0)
        st_ = sr_init(6, dt=1e-4)
        for _ in range(100):
            st_ = sr_step(st_, Phi, np.zeros(3), 1e-4)
        assert np.all(st_.v == 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            sr_init(3, beta=1.5)
        with pytest.raises(ValueError):
            sr_init(3, mu=0.0)
        with pytest.raises(DimensionMismatch):
            sr_step(sr_init(3), np.eye(2), np.zeros(2), 1e-4)
        with pytest.raises(ValueError):
            Dictionary.from_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_fractional_power_is_faster(self):
        Phi, xi = random_instance(3)
        fast = sr_solve(Phi, xi, lam=0.05, beta=0.5, tol=1e-6)
        slow = sr_solve(Phi, xi, lam=0.05, beta=1.0, tol=1e-6)
        assert fast.converged and slow.converged
        assert fast.iterations < slow.iterations
        assert np.allclose(fast.a, slow.a, atol=1e-3)

    def test_budget_exhaustion_warns(self):
        Phi, xi = random_instance(1)
        with pytest.warns(RuntimeWarning):
            res = sr_solve(Phi, xi, lam=0.05, max_steps=5)
        assert not res.converged

    def test_default_lambda(self):
        assert default_lambda(np.eye(2), [3.0, -5.0]) == pytest.approx(0.5)


class TestLassoEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_coordinate_descent(self, seed):
        Phi, xi = random_instance(seed)
        res = sr_solve(Phi, xi, lam=0.05, normalize=False)
        assert res.converged
        assert np.max(np.abs(res.a - lasso_cd(Phi, xi, 0.05))) < 1e-3

    def test_wecc_distribution_one_sparse(self):
        xi = 0.7 * WECC_D_OMEGA[:, 4]
        res = sr_solve(WECC_D_OMEGA, xi, lam=0.02)
        assert res.support == (4,)
        Phi = WECC_D_OMEGA / np.linalg.norm(WECC_D_OMEGA, axis=0)
        assert np.max(np.abs(res.a - lasso_cd(Phi, xi, 0.02))) < 1e-3
        # the raw coefficient is the threshold-shrunk amplitude
        assert res.coefficients[4] == pytest.approx((0.7 * np.sqrt(3) - 0.02) / np.sqrt(3), abs=1e-3)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 0.3))
    def test_kkt_conditions(self, seed, lam):
        Phi, xi = random_instance(seed)
        res = sr_solve(Phi, xi, lam=lam, normalize=False)
        g = Phi.T @ (xi - Phi @ res.a)
        on = np.abs(res.a) > 0
        assert np.all(np.abs(g[on] - lam * np.sign(res.a[on])) < 1e-3)
        assert np.all(np.abs(g[~on]) <= lam + 1e-3)

    def test_l1_norm_shrinks_with_lambda(self):
        Phi, xi = random_instance(7)
        norms = [np.abs(sr_solve(Phi, xi, lam=lam, normalize=False).a).sum()
                 for lam in (0.01, 0.05, 0.1, 0.3, 0.6)]
        assert all(b <= a + 1e-6 for a, b in zip(norms, norms[1:]))


class TestRip:
    def test_orthonormal(self):
        Q = np.linalg.qr(np.random.default_rng(0).normal(size=(5, 5)))[0]
        assert rip_check(Q, 3).constant < 1e-12

    def test_duplicate_columns(self):
        Phi = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        r = rip_check(Phi, 2)
        assert r.constant >= 1.0 and not r.satisfied
        assert r.worst_support == (0, 1)

    @pytest.mark.parametrize("j", [1, 2, 3])
    def test_wecc_matches_sweep(self, j):
        Phi = Dictionary.from_matrix(WECC_D_OMEGA).Phi
        r = rip_check(Phi, j)
        c, S = rip_sweep(Phi, j)
        assert r.constant == pytest.approx(c, abs=1e-12)
        # ties are broken by rounding, so check the reported support attains the maximum
        sv = np.linalg.svd(Phi[:, list(r.worst_support)], compute_uv=False)
        lo = sv[-1] ** 2 if len(sv) == j else 0.0
        assert max(1.0 - lo, sv[0] ** 2 - 1.0) == pytest.approx(c, abs=1e-12)

    def test_wecc_pairs_not_isometric(self):
        # columns 1 and 4 are parallel, so no pair bound below 1 exists
        r = rip_check(Dictionary.from_matrix(WECC_D_OMEGA).Phi, 2)
        assert r.constant == pytest.approx(1.0)

    def test_enumeration_limit(self):
        with pytest.raises(TooManySupports):
            rip_check(np.eye(30), 15, max_supports=1000)
        with pytest.raises(ValueError):
            rip_check(np.eye(3), 4)


def scalar_plant():
    return LinearPlant(A=np.array([[-1.0]]), B1=np.array([[1.0]]), C=np.array([[1.0]]),
                       D1=np.zeros((1, 0)))


def run_filtered(fs, attack, T=3.0, dt=1e-4, L=200.0):
    x, z = 0.0, np.zeros(1)
    diffs = fs.differentiators(L)
    rows = []
    for k in range(int(round(T / dt))):
        t = k * dt
        Z, F, _ = fs.assemble([d.z[:, 0] for d in diffs])
        rows.append((t, Z[0], F[0, 0], attack(t)))
        diffs = fs.advance(diffs, z, dt)
        z = fs.filter_step(z, np.array([x]), dt)
        x = x + dt * (-x + attack(t))
    return np.array(rows)


class TestFilteredSystem:
    def test_structure(self):
        fs = build_filtered_system(scalar_plant(), 0.1)
        assert fs.r == (2,)
        assert fs.F[0, 0] == pytest.approx(10.0)

    def test_no_attack(self):
        fs = build_filtered_system(scalar_plant(), 0.1)
        rows = run_filtered(fs, lambda t: 0.0, T=1.0)
        assert np.max(np.abs(rows[:, 1])) < 1e-12

    def test_step_reconstruction(self):
        fs = build_filtered_system(scalar_plant(), 0.1)
        rows = run_filtered(fs, lambda t: 2.0 if t >= 0.5 else 0.0)
        late = rows[rows[:, 0] >= 1.0]
        d_hat = late[:, 1] / late[:, 2]
        assert np.max(np.abs(d_hat - 2.0)) < 0.05 * 2.0

    def test_zero_dynamics(self):
        # the attack enters a state the filtered output reaches too early to pin down
        plant = LinearPlant(A=np.array([[-1.0, 1.0], [0.0, -2.0]]), B1=np.array([[1.0], [0.0]]),
                            C=np.array([[1.0, 0.0]]), D1=np.zeros((1, 0)))
        with pytest.raises(ZeroDynamicsPresent):
            build_filtered_system(plant, 0.1)

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            build_filtered_system(scalar_plant(), 0.0)
