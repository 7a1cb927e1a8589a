import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinklab.errors import (InvalidPotential, NonPositiveStep, PotentialVanishesInside,
                            QuadratureDisagreement, TailNotReached)
from kinklab.potential import (PotentialModel, compute_kink_profile, compute_mass, estimate_kappa,
                               get_potential, mass_formulas, phi4, reduced_force_constant, sine_gordon)

from conftest import sg_closed_form

PHI = np.linspace(-2.0, 2.0, 401)


@pytest.mark.parametrize("pot", [phi4(), sine_gordon()], ids=["phi4", "sg"])
class TestPotentialInvariants:
    def test_even(self, pot):
        assert np.max(np.abs(pot.u(PHI) - pot.u(-PHI))) <= 1e-12

    def test_vacua(self, pot):
        v = np.array([-1.0, 1.0])
        assert np.max(np.abs(pot.u(v))) <= 1e-12
        assert np.max(np.abs(pot.u2(v) - 1.0)) <= 1e-12
        assert np.max(np.abs(pot.u1_fast(v))) <= 1e-12

    def test_positive_inside(self, pot):
        assert np.all(pot.u(np.linspace(-1, 1, 1001)[1:-1]) > 0)

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_derivatives_by_differences(self, pot, order):
        f = {1: pot.u, 2: pot.u1, 3: pot.u2}[order]
        d = {1: pot.u1, 2: pot.u2, 3: pot.u3}[order]
        errs = []
        for h in (1e-2, 5e-3):
            fd = (f(PHI + h) - f(PHI - h)) / (2 * h)
            errs.append(np.max(np.abs(fd - d(PHI))))
        # second order: halving h divides the error by about 4, unless the
        # difference quotient is already exact (polynomial of degree <= 2)
        assert errs[1] < 1e-3
        assert errs[1] < 1e-11 or errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)

    def test_fast_first_derivative_matches(self, pot):
        assert np.max(np.abs(pot.u1_fast(PHI) - pot.u1(PHI))) <= 1e-12


def test_closed_forms_of_builtins():
    x = np.linspace(-1.0, 1.0, 11)
    assert np.allclose(phi4().u(x), (1 - x ** 2) ** 2 / 8, atol=1e-15)
    assert np.allclose(sine_gordon().u(x), (1 + np.cos(np.pi * x)) / np.pi ** 2, atol=1e-15)


def test_registry():
    assert get_potential("phi4") == phi4()
    with pytest.raises(KeyError, match="phi4"):
        get_potential("nope")


def test_rejects_wrong_curvature():
    # U = (1 - phi^2)^2 has U''(1) = 8
    with pytest.raises(InvalidPotential):
        PotentialModel("bad", (1.0, -2.0, 1.0))


def test_rejects_nonzero_vacuum():
    with pytest.raises(InvalidPotential):
        PotentialModel("bad", (1.0 / 8 + 0.1, -0.25, 1.0 / 8))


def test_rejects_interior_zero():
    # (1 - phi^2)^2 (phi^2 - 1/4)^2, normalised to unit curvature, vanishes at +-1/2
    P = np.polynomial.polynomial
    even = P.polymul(P.polymul([1, -1], [1, -1]), P.polymul([-0.25, 1], [-0.25, 1]))
    curvature = 8 * (0.75 ** 2)
    with pytest.raises(PotentialVanishesInside):
        PotentialModel("bad", tuple(even / curvature))


def test_custom_polynomial_potential_accepted():
    # phi^6-type well with the same vacua: U = (1 - phi^2)^2 (1 + phi^2) / 16
    poly = np.polynomial.polynomial.polymul([1, -2, 1], [1, 1])  # in powers of phi^2
    pot = PotentialModel("custom", tuple(poly / 16))
    prof = compute_kink_profile(pot)
    assert prof.bogomolny_residual() <= 1e-8
    assert prof.kappa > 0 and prof.mass > 0


class TestProfile:
    def test_phi4_closed_form(self, p4):
        x = np.linspace(-39.5, 39.5, 7901)
        assert np.max(np.abs(p4.H(x) - np.tanh(x / 2))) <= 1e-8
        assert np.max(np.abs(p4.dH(x) - 0.5 / np.cosh(x / 2) ** 2)) <= 1e-8

    def test_sine_gordon_closed_form(self, sg):
        x = np.linspace(-39.5, 39.5, 7901)
        assert np.max(np.abs(sg.H(x) - sg_closed_form(x))) <= 1e-8

    def test_origin(self, profile):
        assert abs(profile.H(0.0)) <= 1e-14

    def test_odd(self, profile):
        assert np.max(np.abs(profile.h + profile.h[::-1])) <= 1e-10

    def test_increasing(self, profile):
        assert np.all(np.diff(profile.h) >= 0)
        # strictness is visible in the tail variable 1 - |H| where H rounds to +-1
        right = profile.tail[profile.xs >= 0]
        assert np.all(np.diff(right) < 0)

    def test_bogomolny(self, profile):
        assert profile.bogomolny_residual() <= 1e-8

    def test_tail_law(self, profile):
        hw = profile.half_width
        k = profile.kappa
        # resolvable correction: C e^{-2x} well above rounding of kappa e^{-x}
        x = np.linspace(hw / 8, hw / 4, 200)
        dev = np.abs(profile.one_minus_abs_H(x) - k * np.exp(-x))
        assert np.max(dev * np.exp(2 * x)) <= 10 * k ** 2
        # last quarter: e^{-2x} is invisible next to the relative precision of
        # kappa (ODE accuracy), so the bound carries a kappa-precision term
        x = np.linspace(0.75 * hw, hw, 200)
        dev = np.abs(profile.one_minus_abs_H(x) - k * np.exp(-x))
        assert np.all(dev <= 10 * k ** 2 * np.exp(-2 * x) + 1e-9 * k * np.exp(-x))

    def test_phi4_tail_correction_constant(self, p4):
        # 1 - tanh(x/2) = 2 e^{-x} - 2 e^{-2x} + O(e^{-3x})
        x = np.linspace(6.0, 9.0, 50)
        c = (p4.one_minus_abs_H(x) - 2 * np.exp(-x)) * np.exp(2 * x)
        assert np.allclose(c, -2.0, atol=0.01)

    def test_second_derivative_tail(self, profile):
        x = np.linspace(8.0, 20.0, 100)
        c = np.abs(profile.d2H(x) + profile.kappa * np.exp(-x)) * np.exp(2 * x)
        assert np.max(c) <= 10 * profile.kappa ** 2

    def test_interpolation_beyond_grid_uses_tail(self, p4):
        x = np.array([45.0, -50.0])
        assert np.allclose(p4.one_minus_abs_H(x), 2 * np.exp(-np.abs(x)), rtol=1e-8)

    def test_evaluate_matches_pointwise(self, p4):
        x = np.linspace(-60, 60, 3001)
        h, dh, d2h = p4.evaluate(x, 1.3)
        assert np.max(np.abs(h - p4.H(x - 1.3))) <= 1e-14
        assert np.max(np.abs(dh - p4.dH(x - 1.3))) <= 1e-14
        assert np.max(np.abs(d2h - p4.d2H(x - 1.3))) <= 1e-12


class TestConstants:
    def test_phi4_kappa(self, p4):
        assert p4.kappa == pytest.approx(2.0, abs=1e-6)

    def test_sg_kappa(self, sg):
        assert sg.kappa == pytest.approx(4 / np.pi, abs=1e-6)

    def test_left_tail_same_kappa(self, profile):
        assert estimate_kappa(profile, "left") == pytest.approx(estimate_kappa(profile, "right"), abs=1e-8)

    def test_kappa_fit_residual_small(self, profile):
        _, res = estimate_kappa(profile, return_residual=True)
        assert res < 1e-6

    def test_phi4_mass(self, p4):
        assert p4.mass == pytest.approx(2 / 3, abs=1e-8)

    def test_sg_mass(self, sg):
        assert sg.mass == pytest.approx(8 / np.pi ** 2, abs=1e-8)

    def test_four_mass_formulas(self, profile):
        vals = mass_formulas(profile)
        assert max(vals.values()) - min(vals.values()) <= 1e-8

    def test_under_resolved_profile_disagrees(self):
        coarse = compute_kink_profile(phi4(), step=0.9, half_width=20)
        with pytest.raises(QuadratureDisagreement):
            compute_mass(coarse, tol=1e-12)

    def test_reduced_force(self, profile):
        v = reduced_force_constant(profile)
        assert v == pytest.approx(-2 * profile.kappa, abs=1e-6)
        assert v / (-2 * profile.kappa) == pytest.approx(1.0, abs=1e-6)

    def test_phi4_reduced_force_value(self, p4):
        assert reduced_force_constant(p4) == pytest.approx(-4.0, abs=1e-6)


class TestProfileErrors:
    def test_nonpositive_step(self):
        with pytest.raises(NonPositiveStep):
            compute_kink_profile(phi4(), step=0.0)

    def test_narrow_half_width(self):
        with pytest.raises(ValueError):
            compute_kink_profile(phi4(), half_width=10.0)

    def test_tail_not_reached(self):
        # nearly flat at the origin: the kink leaves phi = 0 too slowly
        eps = 1e-8
        poly = np.polynomial.polynomial.polymul([1, -2, 1], [eps, 1]) / (8 * (1 + eps))
        with pytest.raises(TailNotReached):
            compute_kink_profile(PotentialModel("flat", tuple(poly)), half_width=20.0, step=0.01)


@settings(max_examples=40, deadline=None)
@given(st.floats(-35.0, 35.0))
def test_bogomolny_pointwise(x):
    from kinklab.potential import cached_profile
    p = cached_profile(phi4())
    lhs = float(p.dH(x))
    rhs = float(np.sqrt(2 * phi4().u(np.array([p.H(x)]))[0]))
    assert abs(lhs - rhs) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.floats(-60.0, 60.0), st.floats(1e-3, 5.0))
def test_profile_monotone_and_bounded(x, h):
    from kinklab.potential import cached_profile
    p = cached_profile(sine_gordon())
    a, b = float(p.H(x)), float(p.H(x + h))
    assert -1.0 <= a <= b <= 1.0
    assert float(p.H(-x)) == pytest.approx(-a, abs=1e-12)
