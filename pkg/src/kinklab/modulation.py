"""Modulation of near multi-kink states.

A snapshot ``(phi, phidot)`` is written as ``H(a) + g`` with the
remainder orthogonal to every translation mode ``H_k' = H'(x - a_k)``.
The second component of the remainder is ``phidot`` itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import GapCollapse, NoConvergence, SingularSystem, TrackingLost
from .potential import KinkProfile
from .statics import (
    FieldSnapshot,
    as_positions,
    d_dx,
    field_from_tables,
    interaction_forces,
    kink_tables,
    multikink_field,
    rho,
    signs,
    zero_crossings,
)

NEWTON_TOL = 1e-11
NEWTON_MAXIT = 12
FIT_GAP_FLOOR = 2.0
TRACK_GAP_FLOOR = 4.0


def smoothstep_cutoff(x):
    """Base cutoff: 1 for ``x <= 1/3``, 0 for ``x >= 2/3``, quintic ramp between (C2)."""
    u = np.clip(3.0 * np.asarray(x, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def cutoff_family(a, x, chi: Callable = smoothstep_cutoff) -> np.ndarray:
    """Partition of unity ``chi_1..chi_n`` attached to the kinks, shape ``(n, len(x))``."""
    a = as_positions(a)
    n = a.size
    if n == 1:
        return np.ones((1, np.size(x)))
    y = np.diff(a)
    edges = [chi((x - a[k]) / y[k]) for k in range(n - 1)]
    out = np.empty((n, np.size(x)))
    out[0] = edges[0]
    for k in range(1, n - 1):
        out[k] = edges[k] - edges[k - 1]
    out[n - 1] = 1.0 - edges[n - 2]
    return out


@dataclass(frozen=True, eq=False)
class ModulationFit:
    """Result of a modulation fit.

    Attributes
    ----------
    a : ndarray
        Kink positions.
    g : FieldSnapshot
        Remainder ``(phi - H(a), phidot)``.
    p : ndarray
        Localised momenta.
    rho : float
    ortho_residual : float
        ``max_k |<H_k', g>|``.
    iterations : int
    """

    a: np.ndarray
    g: FieldSnapshot
    p: np.ndarray
    rho: float
    ortho_residual: float
    iterations: int = 0
    tables: Optional[tuple] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.a.size

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.a)

    def g_energy(self) -> float:
        """``||g||_{H1}^2 + ||phidot||^2``."""
        dx = self.g.dx
        gx = d_dx(self.g.phi, dx)
        return float((np.dot(self.g.phi, self.g.phi) + np.dot(gx, gx)
                      + np.dot(self.g.phidot, self.g.phidot)) * dx)

    def g_norm(self) -> float:
        return float(np.sqrt(np.dot(self.g.phi, self.g.phi) * self.g.dx))


def _modes(profile: KinkProfile, a: np.ndarray, x: np.ndarray):
    (dH,) = kink_tables(profile, a, x, (1,))
    return dH


def fit_modulation(snapshot: FieldSnapshot, profile: KinkProfile, seed,
                   tol: float = NEWTON_TOL, maxit: int = NEWTON_MAXIT) -> ModulationFit:
    """Positions making ``phi - H(a)`` orthogonal to the translation modes.

    Newton iteration on ``Gamma_k(a) = <H_k', phi - H(a)>``, damped by
    one half whenever the residual grows.

    Parameters
    ----------
    snapshot : FieldSnapshot
    profile : KinkProfile
    seed : array_like
        Starting positions, sorted.
    tol : float
        Convergence threshold on ``max_k |Gamma_k|``.
    maxit : int

    Raises
    ------
    NoConvergence
        After ``maxit`` iterations.
    GapCollapse
        If an iterate has a gap below 2.
    """
    a = as_positions(seed).copy()
    n = a.size
    x, phi, dx = snapshot.x, snapshot.phi, snapshot.dx
    if n == 0:
        g = FieldSnapshot(x, phi - 1.0, snapshot.phidot, snapshot.sector, snapshot.t)
        return ModulationFit(a, g, np.empty(0), 0.0, 0.0)
    sg = signs(n)

    def residual(a):
        Hs, dH, d2H = kink_tables(profile, a, x, (0, 1, 2))
        g = phi - field_from_tables(Hs)
        return g, dH, d2H, dH @ g * dx

    g, dH, d2H, gam = residual(a)
    err = np.max(np.abs(gam))
    it = 0
    while err > tol:
        if it >= maxit:
            raise NoConvergence(f"modulation Newton: residual {err:.3g} after {maxit} iterations")
        J = (dH @ dH.T) * dx * sg[None, :]
        np.fill_diagonal(J, sg * profile.mass - d2H @ g * dx)
        try:
            step = np.linalg.solve(J, -gam)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence(f"singular modulation Jacobian: {exc}") from None
        lam = 1.0
        while True:
            trial = a + lam * step
            if n > 1 and np.min(np.diff(trial)) < FIT_GAP_FLOOR:
                if lam < 1e-3:
                    raise GapCollapse(f"gap {np.min(np.diff(trial)):.3g} below {FIT_GAP_FLOOR}")
                lam *= 0.5
                continue
            g_t, dH_t, d2H_t, gam_t = residual(trial)
            err_t = np.max(np.abs(gam_t))
            if err_t <= err or lam < 1e-3:
                break
            lam *= 0.5
        a, g, dH, d2H, gam, err = trial, g_t, dH_t, d2H_t, gam_t, err_t
        it += 1
    rem = FieldSnapshot(x, g, snapshot.phidot, snapshot.sector, snapshot.t)
    p = _momenta(profile, a, x, g, snapshot.phidot, dH, dx)
    return ModulationFit(a, rem, p, rho(a), float(err), it, (dH, d2H))


def _momenta(profile, a, x, g, phidot, dH, dx, chi=smoothstep_cutoff):
    sg = signs(a.size)
    gx = d_dx(g, dx)
    chis = cutoff_family(a, x, chi)
    w = -sg[:, None] * dH + chis * gx[None, :]
    return w @ phidot * dx


def localized_momenta(fit: ModulationFit, profile: KinkProfile,
                      chi: Callable = smoothstep_cutoff) -> np.ndarray:
    """``p_k = <-(-1)**k H_k' + chi_k g_x, phidot>`` for a given base cutoff."""
    x = fit.g.x
    return _momenta(profile, fit.a, x, fit.g.phi, fit.g.phidot, _modes(profile, fit.a, x), fit.g.dx, chi)


def modulation_velocity(fit: ModulationFit, profile: KinkProfile, phidot=None,
                        dominance: float = 0.0) -> np.ndarray:
    """Velocities ``a'`` that keep the remainder orthogonal along the flow.

    Solves ``((-1)**k M - <H_k'', g>) a_k' + sum_{j != k} (-1)**j <H_k', H_j'> a_j'
    = -<H_k', phidot>``.

    Raises
    ------
    SingularSystem
        If the matrix is not diagonally dominant by at least ``dominance``
        relative to its diagonal, or is numerically singular.
    """
    a = fit.a
    n = a.size
    if n == 0:
        return np.empty(0)
    x, dx = fit.g.x, fit.g.dx
    v = fit.g.phidot if phidot is None else phidot
    sg = signs(n)
    dH, d2H = fit.tables if fit.tables is not None else kink_tables(profile, a, x, (1, 2))
    A = (dH @ dH.T) * dx * sg[None, :]
    np.fill_diagonal(A, sg * profile.mass - d2H @ fit.g.phi * dx)
    diag = np.abs(np.diag(A))
    off = np.sum(np.abs(A), axis=1) - diag
    if np.any(diag - off <= dominance * diag):
        raise SingularSystem(f"modulation system lost diagonal dominance: diag {diag}, off {off}")
    return np.linalg.solve(A, -(dH @ v) * dx)


@dataclass
class ModulationSeries:
    """Time series of modulation fits.

    Attributes
    ----------
    times : ndarray
    a, p, adot : ndarray
        Shape ``(len(times), n)``; ``adot`` from the orthogonality system.
    rho, ortho, g_energy, energy : ndarray
    lost : bool
        True if tracking stopped on a failed fit.
    lost_time : float or None
    """

    times: np.ndarray
    a: np.ndarray
    p: np.ndarray
    adot: np.ndarray
    rho: np.ndarray
    ortho: np.ndarray
    g_energy: np.ndarray
    energy: np.ndarray
    mass: float
    lost: bool = False
    lost_time: Optional[float] = None
    lost_reason: str = ""

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def y(self) -> np.ndarray:
        return np.diff(self.a, axis=1)

    @property
    def q(self) -> np.ndarray:
        return np.diff(self.p, axis=1) / self.mass

    def __len__(self):
        return self.times.size

    def sorted(self) -> "ModulationSeries":
        """Copy ordered by increasing time (backward runs are recorded in reverse)."""
        o = np.argsort(self.times)
        return ModulationSeries(self.times[o], self.a[o], self.p[o], self.adot[o], self.rho[o],
                                self.ortho[o], self.g_energy[o], self.energy[o], self.mass,
                                self.lost, self.lost_time, self.lost_reason)

    def window(self, t0: float, t1: float) -> "ModulationSeries":
        sel = (self.times >= t0 - 1e-9) & (self.times <= t1 + 1e-9)
        return ModulationSeries(self.times[sel], self.a[sel], self.p[sel], self.adot[sel],
                                self.rho[sel], self.ortho[sel], self.g_energy[sel],
                                self.energy[sel], self.mass, self.lost, self.lost_time,
                                self.lost_reason)

    def to_rows(self):
        """Rows ``t, a_1..a_n, p_1..p_n, rho, ortho_residual, g_energy, adot_1..adot_n``."""
        return np.column_stack([self.times, self.a, self.p, self.rho, self.ortho, self.g_energy, self.adot])

    def header(self):
        n = self.n
        return (["t"] + [f"a_{k}" for k in range(1, n + 1)] + [f"p_{k}" for k in range(1, n + 1)]
                + ["rho", "ortho_residual", "g_energy"] + [f"adot_{k}" for k in range(1, n + 1)])


class ModulationTracker:
    """Online tracker usable as an :func:`~kinklab.evolution.evolve` observer.

    Each call fits the current state seeded by the previous fit advanced
    with its modulation velocity. A failed fit or a gap below
    ``gap_floor`` ends tracking; the observer then asks the solver to
    stop unless ``stop_on_loss`` is False.

    Parameters
    ----------
    profile : KinkProfile
    seed : array_like
        Positions at the first observed time.
    gap_floor : float
    stop_on_loss : bool
    on_fit : callable, optional
        ``on_fit(t, fit)``; a true return value stops the run.
    """

    def __init__(self, profile: KinkProfile, seed, gap_floor: float = TRACK_GAP_FLOOR,
                 stop_on_loss: bool = True, on_fit: Optional[Callable] = None,
                 with_energy: bool = False):
        self.profile = profile
        self.seed = as_positions(seed).copy()
        self.gap_floor = gap_floor
        self.stop_on_loss = stop_on_loss
        self.on_fit = on_fit
        self.with_energy = with_energy
        self._rows = {k: [] for k in ("t", "a", "p", "adot", "rho", "ortho", "ge", "E")}
        self._last_t = None
        self._last_adot = None
        self.lost = False
        self.lost_time = None
        self.lost_reason = ""
        self.last_fit: Optional[ModulationFit] = None

    def __call__(self, t: float, phi: np.ndarray, phidot: np.ndarray, x: Optional[np.ndarray] = None,
                 sector=None) -> bool:
        if self.lost:
            return self.stop_on_loss
        x = self.x if x is None else x
        n = self.seed.size
        sector = sector or (1, (-1) ** n)
        snap = FieldSnapshot(x, phi, phidot, sector, t)
        seed = self.seed
        if self._last_t is not None:
            seed = seed + self._last_adot * (t - self._last_t)
        try:
            fit = fit_modulation(snap, self.profile, seed)
            if n > 1 and np.min(fit.gaps) < self.gap_floor:
                raise GapCollapse(f"gap {np.min(fit.gaps):.3g} below tracking floor {self.gap_floor}")
            adot = modulation_velocity(fit, self.profile)
        except (NoConvergence, GapCollapse, SingularSystem) as exc:
            self.lost = True
            self.lost_time = t
            self.lost_reason = f"{type(exc).__name__}: {exc}"
            return self.stop_on_loss
        r = self._rows
        r["t"].append(t)
        r["a"].append(fit.a)
        r["p"].append(fit.p)
        r["adot"].append(adot)
        r["rho"].append(fit.rho)
        r["ortho"].append(fit.ortho_residual)
        r["ge"].append(fit.g_energy())
        if self.with_energy:
            from .evolution import energy
            r["E"].append(energy(snap, self.profile.potential)[0])
        else:
            r["E"].append(np.nan)
        self.seed = fit.a
        self._last_t = t
        self._last_adot = adot
        self.last_fit = fit
        if self.on_fit is not None and self.on_fit(t, fit):
            return True
        return False

    def bind(self, x: np.ndarray) -> "ModulationTracker":
        """Attach the spatial grid so the tracker can serve as a bare observer."""
        self.x = x
        return self

    def series(self) -> ModulationSeries:
        r = self._rows
        n = self.seed.size
        m = len(r["t"])
        shape = (m, n)
        return ModulationSeries(
            np.array(r["t"], dtype=float),
            np.array(r["a"], dtype=float).reshape(shape),
            np.array(r["p"], dtype=float).reshape(shape),
            np.array(r["adot"], dtype=float).reshape(shape),
            np.array(r["rho"], dtype=float),
            np.array(r["ortho"], dtype=float),
            np.array(r["ge"], dtype=float),
            np.array(r["E"], dtype=float),
            self.profile.mass,
            self.lost,
            self.lost_time,
            self.lost_reason,
        )


def seed_from_crossings(snapshot: FieldSnapshot, n: int) -> np.ndarray:
    """The first ``n`` zero crossings of ``phi``, left to right."""
    zc = zero_crossings(snapshot.x, snapshot.phi)
    if zc.size < n:
        raise TrackingLost(f"found {zc.size} sign changes, need {n}")
    return zc[:n]


def track(traj, profile: KinkProfile, seed=None, n: Optional[int] = None,
          raise_on_loss: bool = True) -> ModulationSeries:
    """Fit every stored snapshot of a trajectory with chained seeds.

    Raises
    ------
    TrackingLost
        If a fit fails and ``raise_on_loss`` is set.
    """
    snaps = traj.snapshots
    if seed is None:
        if n is None:
            raise ValueError("need a seed or a kink count")
        seed = seed_from_crossings(snaps[0], n)
    tr = ModulationTracker(profile, seed, stop_on_loss=True)
    for s in snaps:
        if tr(s.t, s.phi, s.phidot, s.x, s.sector):
            break
    if tr.lost and raise_on_loss:
        raise TrackingLost(f"tracking lost at t = {tr.lost_time}: {tr.lost_reason}")
    return tr.series()


def _centered_derivative(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Second-order derivative along axis 0 on a possibly non-uniform monotone grid."""
    return np.gradient(f, t, axis=0, edge_order=2)


def newton_law_residuals(series: ModulationSeries, profile: KinkProfile,
                         force_step: float = 0.01) -> np.ndarray:
    """Rows ``(t, r1, r2)`` measuring the approximate Newton law.

    ``r1 = max_k |M a_k' - p_k| / rho`` and
    ``r2 = max_k |p_k' - F_k(a)| (-log rho) / rho``, with time derivatives
    by centred differences of the series. End points are dropped.
    """
    s = series.sorted()
    if len(s) < 3:
        return np.empty((0, 3))
    ad = _centered_derivative(s.times, s.a)
    pd = _centered_derivative(s.times, s.p)
    rows = []
    for i in range(1, len(s) - 1):
        r = s.rho[i]
        F = interaction_forces(profile, s.a[i], force_step)
        if r > 0:
            r1 = np.max(np.abs(s.mass * ad[i] - s.p[i])) / r
            r2 = np.max(np.abs(pd[i] - F)) * (-np.log(r)) / r
        else:
            r1 = np.max(np.abs(s.mass * ad[i] - s.p[i]))
            r2 = np.max(np.abs(pd[i] - F))
        rows.append((s.times[i], r1, r2))
    return np.array(rows)


def cluster_grouping(gaps, gap_threshold: float) -> List[int]:
    """Boundaries ``0 = n_0 < n_1 < ... < n_l = n`` of groups of nearby kinks.

    Consecutive kinks share a group iff their gap is below the threshold.
    Accepts a fit or a gap sequence.
    """
    if isinstance(gaps, ModulationFit):
        gaps = gaps.gaps
    gaps = np.asarray(gaps, dtype=float)
    n = gaps.size + 1
    bounds = [0]
    for k, y in enumerate(gaps, start=1):
        if not y < gap_threshold:
            bounds.append(k)
    bounds.append(n)
    return bounds
