"""Time integration of ``phi_tt = phi_xx - U'(phi)``.

Kick-drift-kick leapfrog in time, fourth-order central differences in
space, with the two outermost cells on each side clamped to the vacuum
of the sector. Backward runs negate the velocity and run forward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import BlowupDetected, BoundaryContamination, CflViolation
from .potential import PotentialModel
from .statics import FieldSnapshot, d_dx, window_integral, zero_crossings

# clamped ghost cells at each end, matching the stencil half-width
GHOST = 2
BLOWUP = 10.0


@dataclass(frozen=True)
class EvolutionConfig:
    """Time stepping parameters.

    Parameters
    ----------
    dt : float
        Time step, positive; direction is taken from ``t_span``.
    t_span : (float, float)
        Start and end times; ``t_span[1] < t_span[0]`` runs backward.
    snapshot_stride : int or None
        Store every ``snapshot_stride``-th step; ``None`` stores only the
        end points.
    energy_stride : int or None
        Record energies every this many steps; defaults to the snapshot stride.
    guard : float
        Required distance between the outermost kink and the clamped
        boundary, on top of the light-cone reach ``|t_span|``.
    """

    dt: float = 0.01
    t_span: Tuple[float, float] = (0.0, 10.0)
    snapshot_stride: Optional[int] = None
    energy_stride: Optional[int] = None
    guard: float = 10.0
    check_boundary: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise CflViolation(f"dt must be positive, got {self.dt!r}")

    @property
    def n_steps(self) -> int:
        return int(round(abs(self.t_span[1] - self.t_span[0]) / self.dt))

    @property
    def direction(self) -> float:
        return 1.0 if self.t_span[1] >= self.t_span[0] else -1.0


@dataclass
class Trajectory:
    """Stored output of :func:`evolve`.

    Attributes
    ----------
    times : ndarray
        Snapshot times, monotone in the direction of integration.
    snapshots : list of FieldSnapshot
    energy_times : ndarray
    energies : ndarray
        Rows ``(E, E_p, E_k)`` at ``energy_times``.
    final : FieldSnapshot
    stopped : bool
        Whether an observer stopped the run early.
    """

    times: np.ndarray
    snapshots: List[FieldSnapshot]
    energy_times: np.ndarray
    energies: np.ndarray
    final: FieldSnapshot
    stopped: bool = False


def max_stable_ratio(potential: PotentialModel) -> float:
    """Largest ``dt/dx`` for which leapfrog with the fourth-order Laplacian is stable.

    The stencil's spectral radius is ``16 / (3 dx**2)``; leapfrog requires
    ``dt**2 * lambda_max <= 4``. The curvature of ``U`` is neglected, which
    is safe at the resolutions used here.
    """
    return float(np.sqrt(3.0) / 2.0)


def check_cfl(dt: float, dx: float, potential: PotentialModel, limit: float = 0.9):
    """Raise :class:`CflViolation` unless ``dt/dx`` is below both limits."""
    ratio = dt / dx
    cap = min(limit, max_stable_ratio(potential))
    if ratio >= cap:
        raise CflViolation(f"dt/dx = {ratio:.4g} >= {cap:.4g}")


def _laplacian_into(phi: np.ndarray, out: np.ndarray, inv12dx2: float):
    out[GHOST:-GHOST] = (-(phi[:-4] + phi[4:]) + 16.0 * (phi[1:-3] + phi[3:-1]) - 30.0 * phi[2:-2]) * inv12dx2


def energy(snapshot: FieldSnapshot, potential: PotentialModel,
           window: Optional[Tuple[float, float]] = None) -> Tuple[float, float, float]:
    """Total, potential and kinetic energy, optionally restricted to ``window``."""
    px = d_dx(snapshot.phi, snapshot.dx)
    ep = window_integral(snapshot.x, 0.5 * px * px + potential.u(snapshot.phi), window)
    ek = window_integral(snapshot.x, 0.5 * snapshot.phidot ** 2, window)
    return ep + ek, ep, ek


def _boundary_check(initial: FieldSnapshot, reach: float, guard: float):
    zc = zero_crossings(initial.x, initial.phi)
    # the vacuum sector (1, 1) with no crossings can still carry a bump
    dev = np.abs(initial.phi - np.where(initial.x < 0.5 * (initial.x[0] + initial.x[-1]),
                                        initial.sector[0], initial.sector[1]))
    active = initial.x[(dev > 1e-3) | (np.abs(initial.phidot) > 1e-3)]
    pts = np.concatenate([zc, active])
    if pts.size == 0:
        return
    need = reach + guard
    left = pts.min() - initial.x[0]
    right = initial.x[-1] - pts.max()
    if min(left, right) < need:
        raise BoundaryContamination(
            f"activity within {min(left, right):.3g} of the boundary; need {need:.3g}")


def evolve(initial: FieldSnapshot, potential: PotentialModel, config: EvolutionConfig,
           observer: Optional[Callable[[float, np.ndarray, np.ndarray], bool]] = None,
           observe_every: int = 1) -> Trajectory:
    """Integrate the field equation over ``config.t_span``.

    Parameters
    ----------
    initial : FieldSnapshot
        Data at ``t_span[0]``.
    potential : PotentialModel
    config : EvolutionConfig
    observer : callable, optional
        Called as ``observer(t, phi, phidot)`` every ``observe_every``
        steps (and at the start); a true return value stops the run.
        The arrays are live views and must be copied if retained.
    observe_every : int

    Returns
    -------
    Trajectory

    Raises
    ------
    CflViolation, BoundaryContamination, BlowupDetected
    """
    dx = initial.dx
    dt = config.dt
    check_cfl(dt, dx, potential)
    n_steps = config.n_steps
    if config.check_boundary:
        _boundary_check(initial, n_steps * dt, config.guard)
    sgn = config.direction
    t0 = float(config.t_span[0])

    phi = initial.phi.astype(float).copy()
    vel = sgn * initial.phidot.astype(float).copy()
    lo, hi = float(initial.sector[0]), float(initial.sector[1])
    phi[:GHOST] = lo
    phi[-GHOST:] = hi
    vel[:GHOST] = 0.0
    vel[-GHOST:] = 0.0
    acc = np.zeros_like(phi)
    inv = 1.0 / (12.0 * dx * dx)
    u1 = potential.u1_fast
    core = slice(GHOST, -GHOST)

    def accel():
        _laplacian_into(phi, acc, inv)
        acc[core] -= u1(phi[core])

    def snap(t):
        return FieldSnapshot(initial.x, phi.copy(), sgn * vel, initial.sector, t)

    stride = config.snapshot_stride
    estride = config.energy_stride or stride
    times, snaps, etimes, ens = [], [], [], []

    def record(i, t):
        if stride and i % stride == 0:
            times.append(t)
            snaps.append(snap(t))
        if estride and i % estride == 0:
            etimes.append(t)
            ens.append(energy(FieldSnapshot(initial.x, phi, vel, initial.sector, t), potential))

    accel()
    record(0, t0)
    stopped = False
    if observer is not None and observer(t0, phi, sgn * vel):
        stopped = True
    half = 0.5 * dt
    i = 0
    while not stopped and i < n_steps:
        vel[core] += half * acc[core]
        phi[core] += dt * vel[core]
        accel()
        vel[core] += half * acc[core]
        i += 1
        t = t0 + sgn * i * dt
        if i % 64 == 0 and not np.all(np.abs(phi) < BLOWUP):
            raise BlowupDetected(f"max|phi| exceeded {BLOWUP} at t = {t:.6g}")
        record(i, t)
        if observer is not None and i % observe_every == 0 and observer(t, phi, sgn * vel):
            stopped = True
    t_final = t0 + sgn * i * dt
    final = snap(t_final)
    if not stride or (i % stride):
        times.append(t_final)
        snaps.append(final)
    if estride and i % estride:
        etimes.append(t_final)
        ens.append(energy(final, potential))
    if not snaps or snaps[0].t != t0:
        snaps.insert(0, initial)
        times.insert(0, t0)
    return Trajectory(np.array(times), snaps, np.array(etimes), np.array(ens).reshape(-1, 3),
                      final, stopped)


def kinetic_decay_diagnostic(traj: Trajectory, potential: Optional[PotentialModel] = None) -> np.ndarray:
    """Rows ``(t, E_k t**2)`` over the stored snapshots."""
    rows = []
    for s in traj.snapshots:
        ek = window_integral(s.x, 0.5 * s.phidot ** 2)
        rows.append((s.t, ek * s.t ** 2))
    return np.array(rows).reshape(-1, 2)
