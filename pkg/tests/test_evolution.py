import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinklab.acceptance import finite_propagation_defect
from kinklab.errors import BlowupDetected, BoundaryContamination, CflViolation
from kinklab.evolution import (EvolutionConfig, energy, evolve, kinetic_decay_diagnostic,
                               max_stable_ratio)
from kinklab.statics import FieldSnapshot, h1_sq, multikink_configuration, uniform_grid, zero_crossings


def kink(prof, x, v=0.0, t=0.0):
    g = 1.0 / np.sqrt(1.0 - v * v)
    z = g * (x - v * t)
    return FieldSnapshot(x, prof.H(z), -v * g * prof.dH(z), (-1, 1), t)


def energy_norm(a, b):
    dx = a.dx
    return np.sqrt(h1_sq(a.phi - b.phi, dx) + np.dot(a.phidot - b.phidot, a.phidot - b.phidot) * dx)


def test_static_kink_preserved(profile):
    x = uniform_grid(-40.0, 40.0, 0.02)
    s = kink(profile, x)
    fin = evolve(s, profile.potential, EvolutionConfig(0.01, (0.0, 10.0), check_boundary=False)).final
    assert energy_norm(fin, s) <= 1e-5


def test_vacuum_constant(p4):
    x = uniform_grid(-20.0, 20.0, 0.05)
    s = FieldSnapshot(x, np.ones_like(x), np.zeros_like(x), (1, 1))
    tr = evolve(s, p4.potential, EvolutionConfig(0.02, (0.0, 5.0), snapshot_stride=50))
    for snap in tr.snapshots:
        assert np.all(snap.phi == 1.0) and np.all(snap.phidot == 0.0)
    assert np.all(tr.energies == 0.0)


def test_boosted_center(p4):
    v = 0.2
    x = uniform_grid(-40.0, 60.0, 0.02)
    tr = evolve(kink(p4, x, v), p4.potential, EvolutionConfig(0.01, (0.0, 20.0), snapshot_stride=100))
    for t, s in zip(tr.times, tr.snapshots):
        zc = zero_crossings(s.x, s.phi)
        assert zc.size == 1
        assert zc[0] == pytest.approx(v * t, abs=1e-3)


def test_trajectory_shape(p4):
    x = uniform_grid(-40.0, 40.0, 0.05)
    tr = evolve(kink(p4, x, 0.1), p4.potential, EvolutionConfig(0.025, (0.0, 3.0), snapshot_stride=7))
    assert np.all(np.diff(tr.times) > 0)
    assert {s.sector for s in tr.snapshots} == {(-1, 1)}
    assert tr.times[-1] == pytest.approx(3.0)
    back = evolve(tr.final, p4.potential, EvolutionConfig(0.025, (3.0, 0.0), snapshot_stride=7))
    assert np.all(np.diff(back.times) < 0)


def test_energy_drift(profile):
    x = uniform_grid(-70.0, 90.0, 0.02)
    tr = evolve(kink(profile, x, 0.2), profile.potential, EvolutionConfig(0.01, (0.0, 50.0), energy_stride=100))
    E = tr.energies[:, 0]
    assert np.max(np.abs(E - E[0])) / E[0] <= 1e-6


def test_time_reversal(p4):
    x = uniform_grid(-50.0, 50.0, 0.02)
    s = multikink_configuration(p4, [-5.0, 5.0], x)
    s = FieldSnapshot(x, s.phi, 0.05 * np.exp(-x ** 2), s.sector)
    fwd = evolve(s, p4.potential, EvolutionConfig(0.01, (0.0, 10.0))).final
    back = evolve(fwd, p4.potential, EvolutionConfig(0.01, (10.0, 0.0))).final
    assert back.t == pytest.approx(0.0, abs=1e-12)
    assert energy_norm(back, s) <= 1e-6


def test_deterministic(p4):
    x = uniform_grid(-30.0, 30.0, 0.05)
    s = kink(p4, x, 0.3)
    cfg = EvolutionConfig(0.02, (0.0, 4.0))
    a = evolve(s, p4.potential, cfg).final
    b = evolve(s, p4.potential, cfg).final
    assert np.array_equal(a.phi, b.phi) and np.array_equal(a.phidot, b.phidot)


def test_finite_propagation(p4):
    assert finite_propagation_defect(p4, dx=0.04, dt=0.02, t=5.0) <= 1e-12


class TestErrors:
    def test_cfl_limit(self, p4):
        assert max_stable_ratio(p4.potential) == pytest.approx(np.sqrt(3) / 2)
        x = uniform_grid(-30.0, 30.0, 0.1)
        with pytest.raises(CflViolation):
            evolve(kink(p4, x), p4.potential, EvolutionConfig(0.09, (0.0, 1.0), check_boundary=False))
        with pytest.raises(CflViolation):
            EvolutionConfig(0.0)
        with pytest.raises(CflViolation):
            EvolutionConfig(-0.01)

    def test_boundary(self, p4):
        x = uniform_grid(-30.0, 30.0, 0.05)
        with pytest.raises(BoundaryContamination):
            evolve(kink(p4, x), p4.potential, EvolutionConfig(0.02, (0.0, 25.0)))

    def test_boundary_bump_in_vacuum(self, p4):
        x = uniform_grid(-30.0, 30.0, 0.05)
        s = FieldSnapshot(x, 1.0 + 0.1 * np.exp(-(x - 25.0) ** 2), np.zeros_like(x), (1, 1))
        with pytest.raises(BoundaryContamination):
            evolve(s, p4.potential, EvolutionConfig(0.02, (0.0, 5.0)))

    def test_blowup(self, p4):
        x = uniform_grid(-30.0, 30.0, 0.05)
        s = FieldSnapshot(x, 1.0 + 20.0 * np.exp(-x ** 2), np.zeros_like(x), (1, 1))
        with pytest.raises(BlowupDetected):
            evolve(s, p4.potential, EvolutionConfig(0.02, (0.0, 5.0), check_boundary=False))


class TestEnergy:
    def test_kink_mass(self, profile):
        x = uniform_grid(-40.0, 40.0, 0.01)
        E, Ep, Ek = energy(kink(profile, x), profile.potential)
        assert Ek == 0.0
        assert E == pytest.approx(profile.mass, abs=1e-6)

    def test_two_kink(self, p4):
        M = p4.mass
        s = multikink_configuration(p4, [-6.0, 6.0], uniform_grid(-40.0, 40.0, 0.01))
        E = energy(s, p4.potential)[0]
        assert 2 * M - 1.1 * 8 * np.exp(-12) <= E <= 2 * M - 0.9 * 8 * np.exp(-12)

    def test_sum(self, p4):
        s = kink(p4, uniform_grid(-40.0, 40.0, 0.02), 0.5)
        E, Ep, Ek = energy(s, p4.potential)
        assert abs(E - Ep - Ek) <= 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-35.0, 35.0), min_size=1, max_size=4, unique=True))
    def test_window_split(self, p4, cuts):
        s = kink(p4, uniform_grid(-40.0, 40.0, 0.02), 0.4)
        edges = [-40.0] + sorted(cuts) + [40.0]
        parts = sum(energy(s, p4.potential, (lo, hi))[2] for lo, hi in zip(edges[:-1], edges[1:]))
        assert parts == pytest.approx(energy(s, p4.potential)[2], abs=1e-10)


class TestKineticDiagnostic:
    def test_vacuum_zero(self, p4):
        x = uniform_grid(-20.0, 20.0, 0.05)
        s = FieldSnapshot(x, np.ones_like(x), np.zeros_like(x), (1, 1))
        tr = evolve(s, p4.potential, EvolutionConfig(0.02, (0.0, 2.0), snapshot_stride=10))
        rows = kinetic_decay_diagnostic(tr)
        assert rows.shape == (len(tr.snapshots), 2)
        assert np.all(rows[:, 1] == 0.0)

    def test_static_kink_small(self, p4):
        x = uniform_grid(-40.0, 40.0, 0.02)
        tr = evolve(kink(p4, x), p4.potential,
                    EvolutionConfig(0.01, (0.0, 5.0), snapshot_stride=100, check_boundary=False))
        rows = kinetic_decay_diagnostic(tr)
        assert np.all(rows[:, 1] <= 1e-10 * rows[:, 0] ** 2)
