"""Multi-kink configurations and their static quantities.

Conventions: positions ``a`` are sorted, kink ``k`` (1-based) carries the
sign ``(-1)**k`` so ``H(a; x) = 1 + sum_k (-1)**k (H(x - a_k) + 1)`` goes
from the vacuum ``1`` on the left to ``(-1)**n`` on the right.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh, null_space
from scipy.optimize import minimize

from .errors import GridTooNarrow, NegativeEigenvalue, NoSeed
from .potential import KinkProfile, PotentialModel

# margin beyond the extreme kinks demanded of grids
MARGIN = 20.0
# gap below which asymptotic comparisons lose meaning
Y_FLOOR = 2.0


def as_positions(a) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.ndim != 1:
        raise ValueError("positions must be one-dimensional")
    if a.size > 1 and np.any(np.diff(a) < 0):
        raise ValueError(f"positions must be sorted, got {a}")
    return a


def signs(n: int) -> np.ndarray:
    """``(-1)**k`` for ``k = 1..n``."""
    return np.where(np.arange(1, n + 1) % 2 == 0, 1.0, -1.0)


def gaps(a) -> np.ndarray:
    return np.diff(as_positions(a))


def rho(a) -> float:
    """Interaction weight ``sum_k exp(-(a_{k+1} - a_k))``."""
    return float(np.sum(np.exp(-gaps(a))))


def uniform_grid(lo: float, hi: float, dx: float) -> np.ndarray:
    """Uniform grid with step ``dx`` covering ``[lo, hi]``, anchored at multiples of ``dx``."""
    i0 = int(np.floor(lo / dx))
    i1 = int(np.ceil(hi / dx))
    return np.arange(i0, i1 + 1) * dx


@dataclass(frozen=True, eq=False)
class FieldSnapshot:
    """Field and velocity on a uniform grid.

    Attributes
    ----------
    x : ndarray
        Uniform grid.
    phi, phidot : ndarray
    sector : tuple of int
        Limits ``(iota_minus, iota_plus)`` at the two ends.
    t : float
        Time stamp, zero for static data.
    """

    x: np.ndarray
    phi: np.ndarray
    phidot: np.ndarray
    sector: Tuple[int, int] = (1, 1)
    t: float = 0.0

    def __post_init__(self):
        if self.x.shape != self.phi.shape or self.x.shape != self.phidot.shape:
            raise ValueError("x, phi and phidot must have equal shapes")
        if self.x.size < 5:
            raise ValueError("grid too small")

    @property
    def dx(self) -> float:
        return float((self.x[-1] - self.x[0]) / (self.x.size - 1))

    def tail_error(self) -> float:
        """Distance of the end values from the sector vacua."""
        return float(max(abs(self.phi[0] - self.sector[0]), abs(self.phi[-1] - self.sector[1])))


def inner(f, g, dx: float) -> float:
    """L2 pairing by the rectangle rule; integrands vanish at the grid ends."""
    return float(np.dot(f, g) * dx)


def d_dx(f: np.ndarray, dx: float) -> np.ndarray:
    """Fourth-order central difference, second order at the two outermost nodes."""
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * dx)
    out[1] = (f[2] - f[0]) / (2.0 * dx)
    out[-2] = (f[-1] - f[-3]) / (2.0 * dx)
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx)
    out[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * dx)
    return out


def window_integral(x: np.ndarray, f: np.ndarray, window: Optional[Tuple[float, float]] = None) -> float:
    """Integral of the piecewise-linear interpolant of ``f`` over ``window``.

    Exactly additive over partitions of the window.
    """
    if window is None:
        return float((np.sum(f) - 0.5 * (f[0] + f[-1])) * (x[-1] - x[0]) / (x.size - 1))
    lo, hi = window
    lo = max(lo, x[0])
    hi = min(hi, x[-1])
    if hi <= lo:
        return 0.0
    dx = (x[-1] - x[0]) / (x.size - 1)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * dx)])

    def prim(p):
        i = min(int((p - x[0]) // dx), x.size - 2)
        t = (p - x[i]) / dx
        return cum[i] + dx * (f[i] * t + 0.5 * (f[i + 1] - f[i]) * t * t)

    return float(prim(hi) - prim(lo))


def kink_tables(profile: KinkProfile, a, x, orders=(0, 1)):
    """Stacked ``H(x - a_k)`` (and derivatives) for every kink, one array per order."""
    a = as_positions(a)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and x.size > 1 and np.all(x[1:] >= x[:-1]):
        per = [profile.evaluate(x, ak, orders) for ak in a]
    else:
        fns = {0: profile.H, 1: profile.dH, 2: profile.d2H}
        per = [tuple(fns[o](x - ak) for o in orders) for ak in a]
    return tuple(np.array([p[j] for p in per]).reshape(a.size, *x.shape) for j in range(len(orders)))


def field_from_tables(Hs: np.ndarray) -> np.ndarray:
    """``1 + sum_k (-1)**k (H_k + 1)`` from stacked ``H_k``."""
    n = Hs.shape[0]
    out = np.ones(Hs.shape[1:])
    for k in range(n):
        out += signs(n)[k] * (Hs[k] + 1.0)
    return out


def multikink_field(profile: KinkProfile, a, x) -> np.ndarray:
    """``H(a; x)`` evaluated at arbitrary points."""
    x = np.asarray(x, dtype=float)
    (Hs,) = kink_tables(profile, a, x, (0,))
    return field_from_tables(Hs)


def multikink_derivative(profile: KinkProfile, a, x) -> np.ndarray:
    """``d/dx H(a; x)``."""
    x = np.asarray(x, dtype=float)
    (dHs,) = kink_tables(profile, a, x, (1,))
    return signs(dHs.shape[0]) @ dHs if dHs.shape[0] else np.zeros_like(x)


def multikink_configuration(profile: KinkProfile, a, grid: np.ndarray) -> FieldSnapshot:
    """Static multi-kink snapshot ``(H(a), 0)``.

    Raises
    ------
    GridTooNarrow
        If the grid does not cover ``[a_1 - 20, a_n + 20]``.
    """
    a = as_positions(a)
    grid = np.asarray(grid, dtype=float)
    if a.size and (grid[0] > a[0] - MARGIN or grid[-1] < a[-1] + MARGIN):
        raise GridTooNarrow(f"grid [{grid[0]:.4g}, {grid[-1]:.4g}] does not cover "
                            f"[{a[0] - MARGIN:.4g}, {a[-1] + MARGIN:.4g}]")
    phi = multikink_field(profile, a, grid)
    return FieldSnapshot(grid, phi, np.zeros_like(grid), (1, (-1) ** a.size))


def potential_energy(snapshot: FieldSnapshot, potential: PotentialModel,
                     window: Optional[Tuple[float, float]] = None) -> float:
    """``int 1/2 phi_x**2 + U(phi)`` with fourth-order differences."""
    px = d_dx(snapshot.phi, snapshot.dx)
    dens = 0.5 * px * px + potential.u(snapshot.phi)
    return window_integral(snapshot.x, dens, window)


def _quad_grid(a: np.ndarray, step: float, margin: float = 30.0) -> np.ndarray:
    if a.size == 0:
        return uniform_grid(-margin, margin, step)
    return uniform_grid(a[0] - margin, a[-1] + margin, step)


def multikink_energy(profile: KinkProfile, a, step: float = 0.01) -> float:
    """``E_p(H(a))`` using the exact derivative of the ansatz.

    Preferred over :func:`potential_energy` when energy differences far
    below the finite-difference error are needed.
    """
    a = as_positions(a)
    x = _quad_grid(a, step)
    phi = multikink_field(profile, a, x)
    px = multikink_derivative(profile, a, x)
    dens = 0.5 * px * px + profile.potential.u(phi)
    return float(np.sum(dens) * step)


def _phi_residual(profile: KinkProfile, a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``U'(H(a)) - sum_k (-1)**k U'(H_k)``, equal to ``-H(a)'' + U'(H(a))``."""
    u1 = profile.potential.u1
    (Hs,) = kink_tables(profile, a, x, (0,))
    out = u1(field_from_tables(Hs))
    sg = signs(a.size)
    for k in range(a.size):
        out = out - sg[k] * u1(Hs[k])
    return out


def interaction_force(profile: KinkProfile, potential: Optional[PotentialModel], a, k: int,
                      step: float = 0.01) -> float:
    """Force ``F_k = -dE_p(H(a))/da_k`` on kink ``k`` (1-based).

    Computed as ``(-1)**k <H_k', Phi>`` with ``Phi`` the static residual.
    ``potential`` defaults to the profile's own.
    """
    return float(interaction_forces(profile, a, step)[k - 1])


def interaction_forces(profile: KinkProfile, a, step: float = 0.01) -> np.ndarray:
    """All forces ``F_1..F_n`` at once."""
    a = as_positions(a)
    x = _quad_grid(a, step)
    phi_res = _phi_residual(profile, a, x)
    (dHs,) = kink_tables(profile, a, x, (1,))
    return signs(a.size) * (dHs @ phi_res) * step


def approx_force(kappa: float, a, k: int) -> float:
    """Nearest-neighbour force ``2 kappa**2 (e^{-y_k} - e^{-y_{k-1}})``.

    Missing neighbours contribute nothing.
    """
    y = gaps(a)
    n = y.size + 1
    right = np.exp(-y[k - 1]) if k <= n - 1 else 0.0
    left = np.exp(-y[k - 2]) if k >= 2 else 0.0
    return float(2.0 * kappa ** 2 * (right - left))


def approx_interaction_energy(kappa: float, mass: float, a) -> float:
    """``n M - 2 kappa**2 rho(a)``."""
    a = as_positions(a)
    return float(a.size * mass - 2.0 * kappa ** 2 * rho(a))


def static_residual_norm(profile: KinkProfile, potential: Optional[PotentialModel], a,
                         step: float = 0.01) -> float:
    """L2 norm of ``-H(a)'' + U'(H(a))``."""
    a = as_positions(a)
    x = _quad_grid(a, step)
    r = _phi_residual(profile, a, x)
    return float(np.sqrt(inner(r, r, step)))


def schrodinger_matrix(profile: KinkProfile, a, x: np.ndarray) -> np.ndarray:
    """Dense second-order Dirichlet discretisation of ``-d2/dx2 + U''(H(a))``."""
    dx = (x[-1] - x[0]) / (x.size - 1)
    diag = 2.0 / dx ** 2 + profile.potential.u2(multikink_field(profile, a, x))
    off = -np.ones(x.size - 1) / dx ** 2
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def coercivity_eigencheck(profile: KinkProfile, potential: Optional[PotentialModel], a,
                          grid: Optional[np.ndarray] = None, nu_floor: float = 0.0,
                          projected: bool = True) -> float:
    """Smallest eigenvalue of the linearised operator off the translation modes.

    Parameters
    ----------
    profile : KinkProfile
    potential : PotentialModel or None
        Defaults to ``profile.potential``.
    a : array_like
        Kink positions.
    grid : ndarray, optional
        Defaults to step 0.05 on ``[a_1 - 20, a_n + 20]``.
    nu_floor : float
        Required lower bound.
    projected : bool
        If False, return the smallest eigenvalue of the full operator.

    Raises
    ------
    NegativeEigenvalue
        If the projected eigenvalue is below ``nu_floor``.
    """
    a = as_positions(a)
    if grid is None:
        grid = uniform_grid(a[0] - MARGIN, a[-1] + MARGIN, 0.05) if a.size else uniform_grid(-MARGIN, MARGIN, 0.05)
    L = schrodinger_matrix(profile, a, grid)
    if not projected or a.size == 0:
        return float(eigh(L, eigvals_only=True, subset_by_index=[0, 0])[0])
    modes = np.stack([profile.dH(grid - ak) for ak in a])
    B = null_space(modes)
    nu = float(eigh(B.T @ L @ B, eigvals_only=True, subset_by_index=[0, 0])[0])
    if nu < nu_floor:
        raise NegativeEigenvalue(f"projected eigenvalue {nu:.4g} below floor {nu_floor:.4g}")
    return nu


def zero_crossings(x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Sign changes of ``phi`` located by linear interpolation, left to right."""
    s = np.signbit(phi)
    idx = np.nonzero(s[1:] != s[:-1])[0]
    x0, x1 = x[idx], x[idx + 1]
    f0, f1 = phi[idx], phi[idx + 1]
    return x0 - f0 * (x1 - x0) / (f1 - f0)


def h1_sq(f: np.ndarray, dx: float) -> float:
    fx = d_dx(f, dx)
    return float((np.dot(f, f) + np.dot(fx, fx)) * dx)


def delta_objective(snapshot: FieldSnapshot, profile: KinkProfile, b) -> float:
    """``||phidot||^2 + ||phi - H(b)||_{H1}^2 + rho(b)``."""
    b = np.sort(np.asarray(b, dtype=float))
    dx = snapshot.dx
    diff = snapshot.phi - multikink_field(profile, b, snapshot.x)
    return float(np.dot(snapshot.phidot, snapshot.phidot) * dx + h1_sq(diff, dx) + rho(b))


def delta_distance(snapshot: FieldSnapshot, profile: KinkProfile, n: int,
                   seed=None, tol: float = 1e-10) -> Tuple[float, np.ndarray]:
    """Upper bound for the distance to the set of ``n``-kink configurations.

    Local simplex descent of :func:`delta_objective` from ``seed``, or
    from the zero crossings of ``phi`` when no seed is given.

    Returns
    -------
    delta : float
    b : ndarray
        Minimising positions.

    Raises
    ------
    NoSeed
        If no seed is given and ``phi`` has fewer than ``n`` sign changes.
    """
    if n == 0:
        return delta_objective(snapshot, profile, []), np.empty(0)
    if seed is None:
        zc = zero_crossings(snapshot.x, snapshot.phi)
        if zc.size < n:
            raise NoSeed(f"found {zc.size} sign changes, need {n}")
        seed = zc[:n]
    seed = np.asarray(seed, dtype=float)
    f = lambda b: delta_objective(snapshot, profile, b)
    simplex = np.vstack([seed] + [seed + 0.05 * e for e in np.eye(n)])
    res = minimize(f, seed, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-9, "fatol": tol * 1e-3,
                            "maxiter": 4000 * n})
    best = min((res.fun, np.sort(res.x)), (f(seed), np.sort(seed)), key=lambda p: p[0])
    return float(best[0]), best[1]
