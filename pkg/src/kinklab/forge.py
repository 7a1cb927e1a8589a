"""Construction of kink clusters with prescribed initial positions.

A multi-kink with matched outgoing velocities is placed at a large time
``T`` and evolved backward; the time-``T`` gaps are then adjusted until
the gaps observed when the backward run ends equal the targets.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import BoxExhausted, ConfigError, NegativeDeficit, NoConvergence
from .evolution import EvolutionConfig, Trajectory, energy, evolve
from .modulation import ModulationFit, ModulationSeries, ModulationTracker
from .potential import KinkProfile, PotentialModel
from .statics import (
    FieldSnapshot,
    as_positions,
    multikink_derivative,
    multikink_energy,
    multikink_field,
    rho,
    signs,
    uniform_grid,
)

log = logging.getLogger(__name__)

L0_DEFAULT = 10.0
PSI_TOL = 1e-3


@dataclass(frozen=True)
class ShootSpec:
    """Parameters of the backward shooting problem.

    Parameters
    ----------
    target_gaps : tuple of float
        Gaps wanted when the backward run ends.
    L : float
        Separation floor of the targets.
    T : float
        Shooting horizon.
    box : ((float, float), ...) or None
        Search box per gap; default ``[L - 2, L + 2 log T + 6]``.
    rho_exit : float or None
        Exit threshold; default ``2 n exp(-L1)``.
    l0 : float
        Minimum admissible ``L``.
    dx, dt : float
        PDE resolution.
    stride : float
        Tracking interval in time units.
    """

    target_gaps: Tuple[float, ...]
    L: float
    T: float
    box: Optional[Tuple[Tuple[float, float], ...]] = None
    rho_exit: Optional[float] = None
    l0: float = L0_DEFAULT
    dx: float = 0.02
    dt: float = 0.01
    stride: float = 0.1

    def __post_init__(self):
        tg = tuple(float(y) for y in self.target_gaps)
        object.__setattr__(self, "target_gaps", tg)
        if self.L < self.l0:
            raise ConfigError(f"L = {self.L} below the admissible floor {self.l0}")
        if not self.T > 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        if any(y < self.L - 1e-12 for y in tg):
            raise ConfigError(f"target gaps {tg} must all be >= L = {self.L}")
        if self.box is None:
            lo, hi = self.L - 2.0, self.L + 2.0 * np.log(self.T) + 6.0
            object.__setattr__(self, "box", tuple((lo, hi) for _ in tg))
        box = tuple((float(a), float(b)) for a, b in self.box)
        object.__setattr__(self, "box", box)
        for (lo, hi), y in zip(box, tg):
            if not lo < hi:
                raise ConfigError(f"empty box side [{lo}, {hi}]")
            if not lo <= y <= hi:
                raise ConfigError(f"box side [{lo}, {hi}] does not contain target {y}")
        if self.rho_exit is None:
            object.__setattr__(self, "rho_exit", 2.0 * self.n * np.exp(-self.L1))

    @property
    def n(self) -> int:
        return len(self.target_gaps) + 1

    @property
    def L1(self) -> float:
        return min(lo for lo, _ in self.box) if self.box else self.L - 2.0

    @property
    def L2(self) -> float:
        return max(hi for _, hi in self.box) if self.box else self.L + 2.0 * np.log(self.T) + 6.0


@dataclass
class ShootResult:
    """Outcome of one backward shot.

    Attributes
    ----------
    gaps_at_T : ndarray
    trajectory : Trajectory
        End points of the backward run.
    series : ModulationSeries
        Sorted by increasing time.
    exit_time : float
        Time at which the gaps are read off; zero if the run reached ``t = 0``.
    gaps_at_exit : ndarray
    delta_series : ndarray
        Rows ``(t, rho + ||g||_E**2)``.
    exit_reason : str
    seed_energy_error : float
        ``E - n M`` of the seeded state on the PDE grid.
    """

    gaps_at_T: np.ndarray
    trajectory: Trajectory
    series: ModulationSeries
    exit_time: float
    gaps_at_exit: np.ndarray
    delta_series: np.ndarray
    exit_reason: str = "reached t = 0"
    seed_energy_error: float = 0.0
    positions_at_T: Optional[np.ndarray] = None
    velocities_at_T: Optional[np.ndarray] = None


def centered_positions(gaps) -> np.ndarray:
    a = np.concatenate([[0.0], np.cumsum(np.asarray(gaps, dtype=float))])
    return a - a.mean()


def seed_velocities(a_T, profile: KinkProfile, potential: Optional[PotentialModel] = None,
                    step: float = 0.01, return_details: bool = False):
    """Outgoing velocities making the seeded state carry energy exactly ``n M``.

    ``v_k = (2k - n - 1)/2 * lambda * sqrt(rho)`` with ``lambda`` fixed by
    ``lambda**2 rho f = 2 n M - 2 E_p(H(a_T))``, where
    ``f = || sum_k (2k - n - 1)/2 (-1)**k H_k' ||**2``.

    Raises
    ------
    NegativeDeficit
        If ``E_p(H(a_T)) > n M``.
    """
    a = as_positions(a_T)
    n = a.size
    if n <= 1:
        v = np.zeros(n)
        return (v, {"lambda": 0.0, "f": 0.0, "deficit": 0.0, "energy_error": 0.0}) if return_details else v
    M = profile.mass
    ep = multikink_energy(profile, a, step)
    deficit = 2.0 * n * M - 2.0 * ep
    if not deficit > 0:
        raise NegativeDeficit(f"E_p(H(a_T)) - nM = {ep - n * M:.3g} is not negative")
    c = (2.0 * np.arange(1, n + 1) - n - 1) / 2.0
    x = uniform_grid(a[0] - 30.0, a[-1] + 30.0, step)
    w = sum(c[k] * signs(n)[k] * profile.dH(x - a[k]) for k in range(n))
    f = float(np.dot(w, w) * step)
    r = rho(a)
    lam = float(np.sqrt(deficit / (r * f)))
    v = c * lam * np.sqrt(r)
    if return_details:
        kin = 0.5 * lam ** 2 * r * f
        return v, {"lambda": lam, "f": f, "deficit": deficit, "energy_error": ep + kin - n * M}
    return v


def seeded_state(a_T, v, profile: KinkProfile, x: np.ndarray, t: float) -> FieldSnapshot:
    """``(H(a_T), -sum_k (-1)**k v_k H_k')``."""
    a = as_positions(a_T)
    n = a.size
    phi = multikink_field(profile, a, x)
    phidot = np.zeros_like(x)
    for k in range(n):
        phidot -= signs(n)[k] * v[k] * profile.dH(x - a[k])
    return FieldSnapshot(x, phi, phidot, (1, (-1) ** n), t)


def shot_grid(a_T: np.ndarray, T: float, dx: float, margin: float = 20.0) -> np.ndarray:
    return uniform_grid(a_T[0] - T - margin, a_T[-1] + T + margin, dx)


def shoot_backward(spec: ShootSpec, gaps_T, profile: KinkProfile,
                   potential: Optional[PotentialModel] = None, keep_final: bool = True) -> ShootResult:
    """Seed at ``T`` with gaps ``gaps_T`` and evolve backward with tracking.

    The run stops at the first tracked time where ``rho`` exceeds
    ``spec.rho_exit``, or where tracking fails; the gaps are read at the
    last tracked time before that. Otherwise it runs to ``t = 0``.
    """
    potential = potential or profile.potential
    gaps_T = np.atleast_1d(np.asarray(gaps_T, dtype=float))
    a_T = centered_positions(gaps_T)
    n = a_T.size
    v, det = seed_velocities(a_T, profile, potential, return_details=True)
    x = shot_grid(a_T, spec.T, spec.dx)
    seed = seeded_state(a_T, v, profile, x, spec.T)
    e_seed = energy(seed, potential)[0] - n * profile.mass
    every = max(1, int(round(spec.stride / spec.dt)))
    state = {"exit": None}

    def on_fit(t, fit: ModulationFit):
        if n > 1 and fit.rho > spec.rho_exit:
            state["exit"] = t
            return True
        return False

    tracker = ModulationTracker(profile, a_T, on_fit=on_fit).bind(x)
    cfg = EvolutionConfig(spec.dt, (spec.T, 0.0), snapshot_stride=None)
    traj = evolve(seed, potential, cfg, observer=tracker, observe_every=every)
    series = tracker.series()
    # the crossing fit was recorded; the exit time is the last fit below threshold
    if state["exit"] is not None:
        keep = series.times > state["exit"] + 1e-12
        reason = f"rho exceeded {spec.rho_exit:.3g} at t = {state['exit']:.4g}"
    elif tracker.lost:
        keep = np.ones(len(series), dtype=bool)
        reason = f"tracking lost at t = {tracker.lost_time:.4g}: {tracker.lost_reason}"
    else:
        keep = np.ones(len(series), dtype=bool)
        reason = "reached t = 0"
    idx = np.nonzero(keep)[0]
    last = idx[-1] if idx.size else 0
    exit_time = float(series.times[last]) if reason != "reached t = 0" else 0.0
    gaps_exit = np.diff(series.a[last]) if len(series) else gaps_T.copy()
    srt = series.sorted()
    delta = np.column_stack([srt.times, srt.rho + srt.g_energy])
    if not keep_final:
        traj = Trajectory(traj.times[:0], [], traj.energy_times, traj.energies, traj.final, traj.stopped)
    return ShootResult(gaps_T, traj, srt, exit_time, gaps_exit, delta, reason, float(e_seed),
                       a_T, v)


class _Converged(Exception):
    def __init__(self, y):
        self.y = y


def miranda_search(spec: ShootSpec, profile: KinkProfile, potential: Optional[PotentialModel] = None,
                   tol: float = PSI_TOL, max_newton: int = 12,
                   min_box: float = 0.05) -> Tuple[np.ndarray, ShootResult]:
    """Find time-``T`` gaps whose backward shot lands on the target gaps.

    ``n = 2`` uses a bracketing root finder on the increasing scalar map.
    ``n >= 3`` uses a damped quasi-Newton iteration with a finite-difference
    Jacobian and falls back to recursive box subdivision, keeping sub-boxes
    whose sampled faces satisfy the sign conditions.

    Raises
    ------
    BoxExhausted
        If the face conditions fail on the initial box or no sub-box
        survives down to ``min_box``.
    """
    potential = potential or profile.potential
    target = np.asarray(spec.target_gaps, dtype=float)
    m = target.size
    cache: Dict[Tuple[float, ...], ShootResult] = {}

    def shot(y) -> ShootResult:
        key = tuple(np.round(np.atleast_1d(y), 12))
        if key not in cache:
            cache[key] = shoot_backward(spec, np.array(key), profile, potential, keep_final=False)
            log.info("shot %s -> %s (%s)", key, cache[key].gaps_at_exit, cache[key].exit_reason)
        return cache[key]

    def psi(y) -> np.ndarray:
        return shot(y).gaps_at_exit - target

    if m == 0:
        res = shoot_backward(spec, np.empty(0), profile, potential)
        return np.empty(0), res

    if m == 1:
        lo, hi = spec.box[0]
        f_lo, f_hi = psi([lo])[0], psi([hi])[0]
        if not (f_lo <= 0 <= f_hi):
            raise BoxExhausted(f"face conditions fail: Psi(L1) - y = {f_lo:.4g}, Psi(L2) - y = {f_hi:.4g}")

        def f(y):
            val = psi([y])[0]
            if abs(val) <= tol:
                raise _Converged(y)
            return val

        try:
            y = brentq(f, lo, hi, xtol=1e-9, maxiter=100)
        except _Converged as c:
            y = c.y
        y = np.array([y])
        if abs(psi(y)[0]) > tol:
            raise BoxExhausted(f"bracketing search ended with |Psi - y| = {abs(psi(y)[0]):.3g}")
        return y, shoot_backward(spec, y, profile, potential)

    # n >= 3
    box = np.array(spec.box)
    y0 = initial_guess(spec, profile)
    try:
        y = _quasi_newton(psi, y0, box, tol, max_newton)
        return y, shoot_backward(spec, y, profile, potential)
    except NoConvergence as exc:
        log.info("quasi-Newton stalled (%s); subdividing the box", exc)
    y = _subdivide(psi, box, tol, min_box, max_newton)
    return y, shoot_backward(spec, y, profile, potential)


def initial_guess(spec: ShootSpec, profile: KinkProfile) -> np.ndarray:
    """Per-gap parabolic estimate of the time-``T`` gaps."""
    n = spec.n
    k = np.arange(1, n)
    target = np.asarray(spec.target_gaps)
    t_off = np.exp(0.5 * (target + np.log(profile.mass * k * (n - k) / 2.0))) / profile.kappa
    y = target + 2.0 * np.log1p(spec.T / t_off)
    box = np.array(spec.box)
    return np.clip(y, box[:, 0] + 1e-6, box[:, 1] - 1e-6)


def _fd_jacobian(psi, y, f0, h=0.05):
    m = y.size
    J = np.empty((m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        J[:, j] = (psi(y + e) - f0) / h
    return J


def _quasi_newton(psi, y0, box, tol, maxit):
    y = y0.copy()
    f = psi(y)
    J = _fd_jacobian(psi, y, f)
    for _ in range(maxit):
        if np.max(np.abs(f)) <= tol:
            return y
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            raise NoConvergence("singular Jacobian") from None
        lam = 1.0
        while True:
            yt = np.clip(y + lam * step, box[:, 0], box[:, 1])
            ft = psi(yt)
            if np.max(np.abs(ft)) < np.max(np.abs(f)) or lam < 1 / 16:
                break
            lam *= 0.5
        if np.max(np.abs(ft)) >= np.max(np.abs(f)):
            raise NoConvergence(f"no decrease from |Psi - y| = {np.max(np.abs(f)):.3g}")
        s = yt - y
        # Broyden update
        J = J + np.outer(ft - f - J @ s, s) / np.dot(s, s)
        y, f = yt, ft
    if np.max(np.abs(f)) <= tol:
        return y
    raise NoConvergence(f"|Psi - y| = {np.max(np.abs(f)):.3g} after {maxit} iterations")


def _faces_ok(psi, box) -> bool:
    """Sign conditions checked at face centres only."""
    c = box.mean(axis=1)
    for k in range(box.shape[0]):
        lo = c.copy()
        lo[k] = box[k, 0]
        hi = c.copy()
        hi[k] = box[k, 1]
        if psi(lo)[k] > 0 or psi(hi)[k] < 0:
            return False
    return True


def _subdivide(psi, box, tol, min_box, maxit):
    stack = [box]
    while stack:
        b = stack.pop()
        if not _faces_ok(psi, b):
            continue
        widths = b[:, 1] - b[:, 0]
        if np.max(widths) <= min_box:
            try:
                return _quasi_newton(psi, b.mean(axis=1), b, tol, maxit)
            except NoConvergence:
                continue
        k = int(np.argmax(widths))
        mid = b[k].mean()
        left, right = b.copy(), b.copy()
        left[k, 1] = mid
        right[k, 0] = mid
        stack.extend([right, left])
    raise BoxExhausted("no sub-box satisfies the face conditions down to the resolution floor")


@dataclass
class Certificate:
    """Evidence accompanying a constructed cluster.

    Attributes
    ----------
    shoot : ShootResult
        The accepted backward shot.
    forward : ModulationSeries
        Tracking of the forward re-evolution on ``[0, T]``.
    shift : float
        Translation applied to match the target positions.
    delta_bound : ndarray
        Rows ``(t, (rho + ||g||_E**2) (e^L + t**2))``.
    measured : dict
        Named scalar measurements.
    checks : dict
        Named pass/fail invariants.
    """

    shoot: ShootResult
    forward: ModulationSeries
    shift: float
    delta_bound: np.ndarray
    measured: Dict[str, float]
    checks: Dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failing(self) -> List[str]:
        return [k for k, v in self.checks.items() if not v]


def construct_cluster(target_positions, L: float, T: float, profile: KinkProfile,
                      potential: Optional[PotentialModel] = None, l0: float = L0_DEFAULT,
                      dx: float = 0.02, dt: float = 0.01, stride: float = 0.1,
                      forward_stride: Optional[float] = None) -> Tuple[FieldSnapshot, Certificate]:
    """Initial data of a kink cluster whose fitted positions at ``t = 0`` are the targets.

    Parameters
    ----------
    target_positions : array_like
        Sorted positions with gaps ``>= L``.
    L, T : float
        Separation floor and shooting horizon.
    profile : KinkProfile
    potential : PotentialModel, optional
    l0 : float
        Admissible floor for ``L``.
    dx, dt, stride : float
        PDE resolution and tracking interval.
    forward_stride : float, optional
        Tracking interval of the forward re-evolution; defaults to ``stride``.

    Returns
    -------
    initial : FieldSnapshot
        Data at ``t = 0`` on a grid translated so fitted positions match.
    certificate : Certificate
    """
    potential = potential or profile.potential
    a0 = as_positions(target_positions)
    n = a0.size
    spec = ShootSpec(tuple(np.diff(a0)), L, T, l0=l0, dx=dx, dt=dt, stride=stride)
    gaps_T, shoot = miranda_search(spec, profile, potential)
    initial = shoot.trajectory.final
    measured: Dict[str, float] = {"exit_time": shoot.exit_time, "seed_energy_error": shoot.seed_energy_error}
    checks: Dict[str, bool] = {"exit_time_zero": shoot.exit_time == 0.0}
    fit0_a = shoot.series.a[0] if len(shoot.series) else a0.copy()
    shift = float(np.mean(a0) - np.mean(fit0_a))
    x_shifted = initial.x + shift
    init = FieldSnapshot(x_shifted, initial.phi.copy(), initial.phidot.copy(), initial.sector, 0.0)

    fstride = forward_stride or stride
    every = max(1, int(round(fstride / dt)))
    tracker = ModulationTracker(profile, fit0_a + shift, with_energy=False).bind(x_shifted)
    cfg = EvolutionConfig(dt, (0.0, T), snapshot_stride=None)
    fwd = evolve(init, potential, cfg, observer=tracker, observe_every=every)
    series = tracker.series()
    checks["forward_tracked"] = not series.lost
    t = series.times
    dhat = series.rho + series.g_energy
    bound = dhat * (np.exp(L) + t ** 2)
    delta_bound = np.column_stack([t, bound])
    fit0 = tracker.last_fit
    measured["sup_delta_bound"] = float(np.max(bound)) if bound.size else float("nan")
    measured["g0_energy"] = float(series.g_energy[0]) if len(series) else float("nan")
    measured["g0_energy_over_exp_minus_L"] = measured["g0_energy"] * np.exp(L)
    pos_err = float(np.max(np.abs(series.a[0] - a0))) if len(series) else float("inf")
    measured["position_error"] = pos_err
    checks["positions_match"] = pos_err <= PSI_TOL
    ortho0 = float(series.ortho[0]) if len(series) else float("inf")
    g0_norm = float(np.sqrt(series.g_energy[0])) if len(series) else 0.0
    measured["ortho_residual_0"] = ortho0
    checks["remainder_orthogonal"] = ortho0 <= 1e-9 * max(1.0, g0_norm)
    # solver reversibility: forward run returns to the seeded state
    x_seed = shot_grid(shoot.positions_at_T, T, dx)
    seed = seeded_state(shoot.positions_at_T, shoot.velocities_at_T, profile, x_seed, T)
    diff_phi = fwd.final.phi - seed.phi
    diff_vel = fwd.final.phidot - seed.phidot
    from .statics import h1_sq
    rev = float(np.sqrt(h1_sq(diff_phi, dx) + np.dot(diff_vel, diff_vel) * dx))
    measured["reversibility_error"] = rev
    checks["reversible"] = rev <= 1e-5
    back = shoot.series
    measured["rho_monotone_backward"] = float(np.all(np.diff(back.rho) < 0)) if n > 1 else 1.0
    checks["rho_monotone"] = bool(measured["rho_monotone_backward"])
    checks["seed_energy"] = abs(shoot.seed_energy_error) <= 1e-8
    checks["delta_bound_finite"] = bool(np.all(np.isfinite(bound)))
    cert = Certificate(shoot, series, shift, delta_bound, measured, checks)
    return init, cert
