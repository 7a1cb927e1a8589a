import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinklab.acceptance import zcr_simplex_oracle
from kinklab.errors import NonPositiveTime, StepUnderflow
from kinklab.toda import (TodaConstants, TodaState, asymptotic_law, asymptotic_residuals,
                          cluster_state, coercivity_constants, coercivity_perron,
                          critical_profile_zcr, decompose_rz, hamiltonian, integrate,
                          laplacian, laplacian_sigma_exact, mu0, parabolic_solution,
                          perturbed_parabolic, residuals_decrease, sigma_vector, stable_modes,
                          toda_rhs, trajectory_header, trajectory_rows)

KAPPA, MASS = 2.0, 2.0 / 3.0


def consts(n, kappa=KAPPA, mass=MASS):
    return TodaConstants(kappa, mass, n)


class TestConstants:
    @pytest.mark.parametrize("n", range(2, 13))
    def test_laplacian_sigma(self, n):
        assert laplacian_sigma_exact(n)
        assert np.allclose(laplacian(n) @ sigma_vector(n), 1.0, atol=1e-14)
        assert mu0(n) == pytest.approx(1.0 / np.sum(sigma_vector(n)), rel=1e-15)

    def test_amplitude(self):
        c = consts(3)
        assert c.A ** 2 == pytest.approx(2 * KAPPA ** 2 / MASS, rel=1e-15)

    @pytest.mark.parametrize("n", [3, 4, 7])
    def test_projections(self, n):
        c = consts(n)
        for P in (c.P1(), c.Psigma()):
            assert np.max(np.abs(P @ P - P)) <= 1e-14
            assert np.max(np.abs(c.sigma @ P)) <= 1e-13
        assert np.max(np.abs(c.Psigma() - c.Psigma().T)) <= 1e-15


class TestRhs:
    def test_free_motion(self):
        da, dp = toda_rhs(TodaState(0.0, np.array([1.0]), np.array([0.3])), consts(1))
        assert da[0] == pytest.approx(0.3 / MASS) and dp[0] == 0.0

    def test_unit_force(self):
        y = np.log(2 * KAPPA ** 2)
        _, dp = toda_rhs(TodaState(0.0, np.array([0.0, y]), np.zeros(2)), consts(2))
        assert dp == pytest.approx([1.0, -1.0], abs=1e-15)

    @pytest.mark.parametrize("n", range(2, 7))
    @pytest.mark.parametrize("t", [1.0, 10.0, 100.0])
    def test_parabolic_substitution(self, n, t):
        c = consts(n)
        s = parabolic_solution(c, n, t)
        da, dp = toda_rhs(s, c)
        k = np.arange(1, n + 1)
        assert np.max(np.abs(da - (2 * k - n - 1) / t)) <= 1e-12
        assert np.max(np.abs(dp - MASS * (n + 1 - 2 * k) / t ** 2)) <= 1e-12

    @pytest.mark.parametrize("n", range(2, 7))
    def test_integer_identity(self, n):
        for k in range(1, n + 1):
            assert k * (n - k) - (k - 1) * (n - k + 1) == n + 1 - 2 * k

    @settings(max_examples=50)
    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=6), st.floats(0.5, 3.0))
    def test_third_law(self, pos, kappa):
        a = np.sort(np.array(pos))
        _, dp = toda_rhs(TodaState(0.0, a, np.zeros_like(a)), consts(a.size, kappa))
        assert abs(np.sum(dp)) <= 1e-12 * max(1.0, np.max(np.abs(dp)))


class TestParabolic:
    def test_two_kink_value(self):
        s = parabolic_solution(consts(2), 2, 10.0)
        # closed form 2 log(20) + log(3); frozen by direct evaluation
        assert s.y[0] == pytest.approx(2 * np.log(20) + np.log(3), abs=1e-10)
        assert s.y[0] == pytest.approx(7.090076835776, abs=1e-10)
        assert s.p == pytest.approx([-1 / 15, 1 / 15], abs=1e-15)

    def test_single(self):
        s = parabolic_solution(consts(1), 1, 5.0, center=3.0)
        assert s.a[0] == 3.0 and s.p[0] == 0.0

    def test_center(self):
        assert np.mean(parabolic_solution(consts(5), 5, 7.0, center=-2.0).a) == pytest.approx(-2.0, abs=1e-13)

    def test_time_must_be_positive(self):
        with pytest.raises(NonPositiveTime):
            parabolic_solution(consts(2), 2, 0.0)
        with pytest.raises(NonPositiveTime):
            asymptotic_law(consts(2), 2, -1.0)


class TestIntegrate:
    def test_matches_parabolic(self):
        c = consts(2)
        end = integrate(parabolic_solution(c, 2, 10.0), c, (10.0, 100.0), tol=1e-10)[-1]
        ref = parabolic_solution(c, 2, 100.0)
        assert np.max(np.abs(end.a - ref.a)) <= 1e-6
        assert np.max(np.abs(end.p - ref.p)) <= 1e-6

    def test_reversible(self):
        c = consts(3)
        tol = 1e-10
        s0 = parabolic_solution(c, 3, 10.0)
        s1 = integrate(s0, c, (10.0, 100.0), tol=tol)[-1]
        back = integrate(s1, c, (100.0, 10.0), tol=tol)[-1]
        assert np.max(np.abs(np.concatenate([back.a - s0.a, back.p - s0.p]))) <= 5 * tol * 10

    def test_free_motion(self):
        c = consts(1)
        s = integrate(TodaState(0.0, np.array([1.0]), np.array([0.2])), c, (0.0, 50.0))[-1]
        assert s.a[0] == pytest.approx(1.0 + 0.2 * 50.0 / MASS, rel=1e-13)

    def test_conservation(self):
        c = consts(4)
        # an attractive system only escapes with enough outward momentum
        s0 = parabolic_solution(c, 4, 1.0)
        s0 = TodaState(0.0, s0.a, 1.5 * s0.p + np.array([0.03, -0.01, 0.02, -0.04]))
        tol = 1e-10
        states = integrate(s0, c, (0.0, 100.0), tol=tol, t_eval=np.linspace(0, 100, 11))
        P0, H0 = np.sum(s0.p), hamiltonian(s0, c)
        for s in states:
            assert abs(np.sum(s.p) - P0) <= 1e-10
            assert abs(hamiltonian(s, c) - H0) <= tol * 10 * max(s.t, 1.0)

    def test_leapfrog_option(self):
        c = consts(2)
        s0 = parabolic_solution(c, 2, 10.0)
        lf = integrate(s0, c, (10.0, 20.0), method="leapfrog", dt=1e-3)[-1]
        rk = integrate(s0, c, (10.0, 20.0))[-1]
        assert np.max(np.abs(lf.a - rk.a)) <= 1e-5

    def test_bad_tolerance(self):
        with pytest.raises(ValueError):
            integrate(parabolic_solution(consts(2), 2, 1.0), consts(2), (1.0, 2.0), tol=1e-3)

    def test_collapse_backward(self):
        c = consts(3)
        # the gaps shrink to zero in finite backward time
        with pytest.raises(StepUnderflow):
            integrate(parabolic_solution(c, 3, 1.0), c, (1.0, -5.0))


class TestDecomposition:
    def test_constant_gaps(self):
        c = consts(4)
        a = np.array([0.0, 5.0, 10.0, 15.0])
        r, z, b, w = decompose_rz(TodaState(0.0, a, np.zeros(4)), c)
        assert r == pytest.approx(5.0, abs=1e-14) and np.max(np.abs(z)) <= 1e-14
        assert b == 0.0 and np.all(w == 0.0)

    @pytest.mark.parametrize("n", [3, 4, 6])
    def test_parabolic_z(self, n):
        c = consts(n)
        s2 = 2 * c.sigma
        expected = -np.log(s2) + c.mu0 * np.dot(c.sigma, np.log(s2))
        for t in (3.0, 30.0, 300.0):
            s = parabolic_solution(c, n, t)
            r, z, b, w = decompose_rz(s, c)
            assert np.max(np.abs(z - expected)) <= 1e-12
            assert np.max(np.abs(r + z - s.y)) <= 1e-14 * max(1.0, r)

    @settings(max_examples=50)
    @given(st.lists(st.floats(0.5, 30.0), min_size=2, max_size=8))
    def test_sigma_orthogonal(self, gaps):
        n = len(gaps) + 1
        c = consts(n)
        a = np.concatenate([[0.0], np.cumsum(gaps)])
        r, z, _, _ = decompose_rz(TodaState(0.0, a, np.zeros(n)), c)
        assert abs(np.dot(c.sigma, z)) <= 1e-14 * max(1.0, np.sum(c.sigma * np.abs(a[1:])))
        assert np.max(np.abs(r + z - np.diff(a))) <= 1e-13 * max(1.0, a[-1])

    def test_needs_two(self):
        with pytest.raises(ValueError):
            decompose_rz(TodaState(0.0, np.zeros(1), np.zeros(1)), consts(1))


class TestCriticalProfile:
    def test_small_n(self):
        assert critical_profile_zcr(consts(2)) == pytest.approx([0.0], abs=1e-15)
        assert critical_profile_zcr(consts(3)) == pytest.approx([0.0, 0.0], abs=1e-15)

    def test_four(self):
        z = critical_profile_zcr(consts(4))
        assert z == pytest.approx([0.11507, -0.17261, 0.11507], abs=1e-5)
        assert abs(np.dot(consts(4).sigma, z)) <= 1e-14

    @pytest.mark.parametrize("n", [3, 4, 5, 6])
    def test_simplex_oracle(self, n):
        assert np.max(np.abs(critical_profile_zcr(consts(n)) - zcr_simplex_oracle(n))) <= 1e-8


class TestCoercivity:
    def test_two(self):
        assert coercivity_constants(consts(2)) == float("inf")

    def test_three(self):
        assert coercivity_constants(consts(3)) == pytest.approx(3.0, abs=1e-12)

    @pytest.mark.parametrize("n", range(3, 11))
    def test_positive_and_perron(self, n):
        c = consts(n)
        mu1 = coercivity_constants(c)
        lam, alt = coercivity_perron(c)
        assert mu1 > 0
        assert lam == pytest.approx(2.0, abs=1e-12)
        assert alt == pytest.approx(mu1, abs=1e-12)


class TestAsymptoticLaw:
    def test_example(self):
        gaps, vel = asymptotic_law(consts(2), 2, 10.0)
        assert gaps[0] == pytest.approx(7.090076835776, abs=1e-10)
        assert vel == pytest.approx([-0.1, 0.1], abs=1e-15)

    @settings(max_examples=50)
    @given(st.integers(1, 9), st.floats(0.1, 1e4))
    def test_velocity_sum(self, n, t):
        assert abs(np.sum(asymptotic_law(consts(n), n, t)[1])) <= 1e-14 * n / t + 1e-300

    @given(st.integers(3, 9), st.floats(0.1, 1e4), st.floats(0.1, 1e4))
    def test_gap_differences_time_independent(self, n, t1, t2):
        g1 = np.diff(asymptotic_law(consts(n), n, t1)[0])
        g2 = np.diff(asymptotic_law(consts(n), n, t2)[0])
        k = np.arange(1, n - 1)
        expected = np.log(k * (n - k)) - np.log((k + 1) * (n - k - 1))
        assert np.allclose(g1, expected, atol=1e-12) and np.allclose(g2, expected, atol=1e-12)

    def test_residuals_on_exact_orbit(self):
        c = consts(3)
        s = [parabolic_solution(c, 3, t) for t in (10.0, 20.0)]
        rows = asymptotic_residuals([x.t for x in s], [x.a for x in s], [x.p / MASS for x in s],
                                    [x.p for x in s], c)
        assert np.all(np.abs(rows[:, 1:]) <= 1e-12)

    def test_decrease_rule(self):
        assert residuals_decrease(np.array([1.0, 0.5, 0.7, 0.2]))
        assert not residuals_decrease(np.array([1.0, 1.5, 0.2]))
        assert not residuals_decrease(np.array([0.5, 0.6]))
        assert residuals_decrease(np.array([1e-12, 2e-12]))
        assert not residuals_decrease(np.array([]))


class TestLinearisation:
    @pytest.mark.parametrize("n", range(2, 11))
    def test_spectrum(self, n):
        lam, V = stable_modes(consts(n))
        j = np.arange(1, n)
        # roots of s**2 - s - j (j + 1): decaying root -j
        assert np.allclose(lam, -j, atol=1e-10)
        assert np.allclose(np.linalg.norm(V, axis=0), 1.0)

    def test_perturbation_is_first_order(self):
        c = consts(4)
        base = parabolic_solution(c, 4, 10.0)
        s = perturbed_parabolic(c, 10.0, [1e-3, 0.0, 0.0])
        assert np.sum(s.p) == pytest.approx(0.0, abs=1e-15)
        assert 0 < np.max(np.abs(s.y - base.y)) <= 1e-3 + 1e-15

    def test_cluster_state_validates(self):
        with pytest.raises(NonPositiveTime):
            cluster_state(consts(3), 10.0, 5.0, [1e-3, 0.0])


@pytest.mark.parametrize("n", [3, 4])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_slow_attraction_to_critical_profile(n, seed):
    c = consts(n)
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=n - 1)
    coeffs *= 1e-3 / np.linalg.norm(coeffs)
    s0 = cluster_state(c, 10.0, 100.0, coeffs)
    _, z0, _, _ = decompose_rz(s0, c)
    z_cr = critical_profile_zcr(c)
    # the parabolic orbit sits exactly on the critical profile
    assert np.max(np.abs(decompose_rz(parabolic_solution(c, n, 10.0), c)[1] - z_cr)) <= 1e-12
    assert np.max(np.abs(z0 - z_cr)) >= 1e-4
    end = integrate(s0, c, (10.0, 1e4), tol=1e-12)[-1]
    _, z, _, _ = decompose_rz(end, c)
    assert np.max(np.abs(z - z_cr)) <= 0.05


def test_trajectory_rows():
    c = consts(3)
    states = integrate(parabolic_solution(c, 3, 10.0), c, (10.0, 20.0), t_eval=[10.0, 15.0, 20.0])
    rows = trajectory_rows(states, c)
    assert rows.shape == (3, len(trajectory_header(3)))
    assert trajectory_header(3)[-1] == "hamiltonian_monitor"
