"""Attractive Toda n-body system and its linear algebra.

Equations of motion::

    a_k' = p_k / M
    p_k' = 2 kappa**2 (exp(-(a_{k+1} - a_k)) - exp(-(a_k - a_{k-1})))

with absent neighbours contributing nothing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import eigh, null_space

from .errors import NonPositive, NonPositiveTime, StepUnderflow


@dataclass(frozen=True)
class TodaState:
    """Time, positions and momenta."""

    t: float
    a: np.ndarray
    p: np.ndarray

    @property
    def n(self) -> int:
        return self.a.size

    @property
    def y(self) -> np.ndarray:
        return np.diff(self.a)

    def q(self, mass: float) -> np.ndarray:
        return np.diff(self.p) / mass

    @property
    def rho(self) -> float:
        return float(np.sum(np.exp(-self.y)))


def laplacian(n: int) -> np.ndarray:
    """Discrete Dirichlet Laplacian of size ``n - 1``: 2 on the diagonal, -1 beside it."""
    m = n - 1
    return 2.0 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)


def sigma_vector(n: int) -> np.ndarray:
    k = np.arange(1, n)
    return k * (n - k) / 2.0


def mu0(n: int) -> float:
    """``1 / (sigma . 1) = 12 / ((n + 1) n (n - 1))``."""
    return 12.0 / ((n + 1) * n * (n - 1))


def laplacian_sigma_exact(n: int) -> bool:
    """Check ``Delta sigma = 1`` in rational arithmetic."""
    sig = [Fraction(k * (n - k), 2) for k in range(1, n)]
    m = n - 1
    for i in range(m):
        v = 2 * sig[i]
        if i > 0:
            v -= sig[i - 1]
        if i < m - 1:
            v -= sig[i + 1]
        if v != 1:
            return False
    return True


@dataclass(frozen=True, eq=False)
class TodaConstants:
    """Constants of the reduced system for ``n`` kinks.

    Attributes
    ----------
    kappa, mass : float
    n : int
    A : float
        ``kappa sqrt(2 / M)``.
    sigma : ndarray
        ``sigma_k = k (n - k) / 2``.
    mu0 : float
    laplacian : ndarray
    """

    kappa: float
    mass: float
    n: int

    @property
    def A(self) -> float:
        return float(self.kappa * np.sqrt(2.0) / np.sqrt(self.mass))

    @property
    def sigma(self) -> np.ndarray:
        return sigma_vector(self.n)

    @property
    def mu0(self) -> float:
        return mu0(self.n) if self.n >= 2 else float("nan")

    @property
    def laplacian(self) -> np.ndarray:
        return laplacian(self.n)

    @property
    def ones(self) -> np.ndarray:
        return np.ones(self.n - 1)

    def P1(self) -> np.ndarray:
        """Projection along ``1`` onto ``{z : sigma . z = 0}``."""
        return np.eye(self.n - 1) - self.mu0 * np.outer(self.ones, self.sigma)

    def Psigma(self) -> np.ndarray:
        """Orthogonal projection onto ``{z : sigma . z = 0}``."""
        s = self.sigma
        return np.eye(self.n - 1) - np.outer(s, s) / np.dot(s, s)

    @classmethod
    def from_profile(cls, profile, n: int) -> "TodaConstants":
        return cls(profile.kappa, profile.mass, n)


def toda_rhs(state: TodaState, c: TodaConstants) -> Tuple[np.ndarray, np.ndarray]:
    """Right-hand side ``(a', p')``."""
    return _rhs(state.a, state.p, c.kappa, c.mass)


def _rhs(a, p, kappa, mass):
    da = p / mass
    ey = 2.0 * kappa ** 2 * np.exp(-np.diff(a))
    dp = np.zeros_like(a)
    dp[:-1] += ey
    dp[1:] -= ey
    return da, dp


def hamiltonian(state: TodaState, c: TodaConstants) -> float:
    """``|p|**2 / (2 M) - 2 kappa**2 sum exp(-y_k)``, conserved along the flow."""
    return float(np.dot(state.p, state.p) / (2.0 * c.mass) - 2.0 * c.kappa ** 2 * state.rho)


def parabolic_gaps(c: TodaConstants, t: float) -> np.ndarray:
    k = np.arange(1, c.n)
    return 2.0 * np.log(c.kappa * t) - np.log(c.mass * k * (c.n - k) / 2.0)


def parabolic_solution(c: TodaConstants, n: Optional[int], t: float, center: float = 0.0) -> TodaState:
    """Explicit parabolic motion at time ``t``.

    Gaps ``2 log(kappa t) - log(M k (n - k) / 2)``, mean position
    ``center``, momenta ``M (2k - n - 1) / t``. The momentum sign is the
    one consistent with the equations of motion.

    Raises
    ------
    NonPositiveTime
    """
    n = c.n if n is None else n
    if n != c.n:
        c = TodaConstants(c.kappa, c.mass, n)
    if not t > 0:
        raise NonPositiveTime(f"t must be positive, got {t!r}")
    a = np.concatenate([[0.0], np.cumsum(parabolic_gaps(c, t))]) if n > 1 else np.zeros(1)
    a = a - a.mean() + center
    k = np.arange(1, n + 1)
    p = c.mass * (2 * k - n - 1) / t
    return TodaState(float(t), a, p)


def integrate(initial: TodaState, c: TodaConstants, t_span: Tuple[float, float], tol: float = 1e-10,
              t_eval: Optional[Sequence[float]] = None, method: str = "rk45",
              dt: Optional[float] = None) -> List[TodaState]:
    """Integrate from ``initial.t`` (taken as ``t_span[0]``) to ``t_span[1]``.

    Parameters
    ----------
    initial : TodaState
    c : TodaConstants
    t_span : (float, float)
        May run backward.
    tol : float
        Relative and absolute tolerance of the embedded 5(4) pair,
        in ``[1e-12, 1e-6]``.
    t_eval : sequence of float, optional
        Output times; default the two end points.
    method : {"rk45", "leapfrog"}
        ``"leapfrog"`` is a fixed-step symplectic integrator with step ``dt``.

    Raises
    ------
    StepUnderflow
        If the adaptive step collapses (gap collapse or blow-up).
    """
    if not 1e-12 <= tol <= 1e-6:
        raise ValueError(f"tol must lie in [1e-12, 1e-6], got {tol!r}")
    n = initial.n
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t_eval is None:
        t_eval = [t0, t1]
    t_eval = np.asarray(t_eval, dtype=float)
    if method == "leapfrog":
        return _leapfrog(initial, c, t0, t1, t_eval, dt or 1e-3)
    if method != "rk45":
        raise ValueError(f"unknown method {method!r}")
    k2 = c.kappa, c.mass

    def f(_t, u):
        da, dp = _rhs(u[:n], u[n:], *k2)
        return np.concatenate([da, dp])

    u0 = np.concatenate([initial.a, initial.p])
    sol = solve_ivp(f, (t0, t1), u0, method="RK45", rtol=tol, atol=tol, t_eval=t_eval)
    if sol.status != 0:
        # sol.t only holds the requested output times reached so far
        ts = np.asarray(sol.t, dtype=float)
        where = f"after t = {ts[-1]}" if ts.size else f"before the first output time, starting at {t0}"
        raise StepUnderflow(f"integration failed {where}: {sol.message}")
    return [TodaState(float(t), sol.y[:n, i].copy(), sol.y[n:, i].copy()) for i, t in enumerate(sol.t)]


def _leapfrog(initial, c, t0, t1, t_eval, dt):
    n = initial.n
    steps = max(1, int(np.ceil(abs(t1 - t0) / dt)))
    h = (t1 - t0) / steps
    a, p = initial.a.copy(), initial.p.copy()
    out = []
    targets = list(np.sort(t_eval) if t1 >= t0 else np.sort(t_eval)[::-1])
    t = t0
    _, dp = _rhs(a, p, c.kappa, c.mass)
    for i in range(steps + 1):
        while targets and abs(targets[0] - t) <= 0.5 * abs(h):
            out.append(TodaState(float(targets.pop(0)), a.copy(), p.copy()))
        if i == steps:
            break
        p = p + 0.5 * h * dp
        a = a + h * p / c.mass
        _, dp = _rhs(a, p, c.kappa, c.mass)
        p = p + 0.5 * h * dp
        t = t0 + (i + 1) * h
        if not np.all(np.isfinite(a)):
            raise StepUnderflow(f"non-finite state at t = {t}")
    return out


def decompose_rz(state: TodaState, c: TodaConstants):
    """Split gaps and relative momenta along ``1`` and the plane ``sigma . z = 0``.

    Returns
    -------
    r : float
        ``mu0 sigma . y``.
    z : ndarray
        ``y - r 1``.
    b : float
        ``mu0 sigma . q``.
    w : ndarray
        ``q - b 1``.
    """
    if state.n < 2:
        raise ValueError("decomposition needs at least two kinks")
    y = state.y
    q = state.q(c.mass)
    r = c.mu0 * np.dot(c.sigma, y)
    b = c.mu0 * np.dot(c.sigma, q)
    return float(r), y - r, float(b), q - b


def critical_profile_zcr(c: TodaConstants) -> np.ndarray:
    """Minimiser of ``1 . exp(-z)`` on ``sigma . z = 0``: ``-log(lambda sigma)``."""
    s = c.sigma
    lam = np.exp(-c.mu0 * np.dot(s, np.log(s)))
    z = -np.log(lam * s)
    # remove the rounding-level component along sigma
    return z - np.dot(s, z) / np.dot(s, s) * s


def coercivity_constants(c: TodaConstants) -> float:
    """Smallest eigenvalue of ``Delta - mu0 1 1^T`` on ``sigma``-orthogonal vectors.

    Returns ``inf`` for ``n = 2`` where the plane is trivial.

    Raises
    ------
    NonPositive
    """
    if c.n < 2:
        raise ValueError("needs at least two kinks")
    if c.n == 2:
        return float("inf")
    D = c.laplacian - c.mu0 * np.outer(c.ones, c.ones)
    P = c.Psigma()
    S = P @ D @ P
    S = 0.5 * (S + S.T)
    B = null_space(c.sigma[None, :])
    mu1 = float(eigh(B.T @ S @ B, eigvals_only=True)[0])
    if not mu1 > 0:
        raise NonPositive(f"coercivity constant {mu1:.4g} is not positive")
    return mu1


def coercivity_perron(c: TodaConstants) -> Tuple[float, float]:
    """Independent route via the positive matrix ``2 I + mu0 1 1^T - Delta``.

    Its Perron eigenvalue is 2 with eigenvector ``sigma``, so the form is
    coercive on the complement with constant ``2 - lambda_2``.

    Returns
    -------
    (perron_eigenvalue, mu1)
    """
    m = c.n - 1
    T = 2.0 * np.eye(m) + c.mu0 * np.outer(c.ones, c.ones) - c.laplacian
    ev = np.sort(np.linalg.eigvalsh(T))[::-1]
    mu1 = float(2.0 - ev[1]) if m > 1 else float("inf")
    return float(ev[0]), mu1


def asymptotic_law(c: TodaConstants, n: Optional[int], t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Predicted gaps ``2 log(kappa t) - log(M k (n-k) / 2)`` and velocities ``(2k - n - 1) / t``."""
    n = c.n if n is None else n
    if n != c.n:
        c = TodaConstants(c.kappa, c.mass, n)
    if not t > 0:
        raise NonPositiveTime(f"t must be positive, got {t!r}")
    k = np.arange(1, n + 1)
    return parabolic_gaps(c, t), (2 * k - n - 1) / t


def trajectory_rows(states: Sequence[TodaState], c: TodaConstants) -> np.ndarray:
    """Rows ``t, a, p, r, z, hamiltonian``."""
    rows = []
    for s in states:
        if s.n >= 2:
            r, z, _, _ = decompose_rz(s, c)
        else:
            r, z = 0.0, np.empty(0)
        rows.append(np.concatenate([[s.t], s.a, s.p, [r], z, [hamiltonian(s, c)]]))
    return np.array(rows)


def trajectory_header(n: int) -> List[str]:
    return (["t"] + [f"a_{k}" for k in range(1, n + 1)] + [f"p_{k}" for k in range(1, n + 1)]
            + ["r"] + [f"z_{k}" for k in range(1, n)] + ["hamiltonian_monitor"])


def asymptotic_residuals(times, a, adot, p, c: TodaConstants) -> np.ndarray:
    """Rows ``(t, gap, velocity, tq)`` of deviations from the parabolic law.

    ``gap = max_k |y_k - law_k(t)|``, ``velocity = max_k |t a_k' + n + 1 - 2k|``
    and ``tq = max_k |t (p_{k+1} - p_k) / M - 2|``.
    """
    times = np.asarray(times, dtype=float)
    a, adot, p = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (a, adot, p))
    n = a.shape[1]
    if n != c.n:
        c = TodaConstants(c.kappa, c.mass, n)
    k = np.arange(1, n + 1)
    rows = []
    for i, t in enumerate(times):
        if not t > 0:
            raise NonPositiveTime(f"t must be positive, got {t!r}")
        gap = np.max(np.abs(np.diff(a[i]) - parabolic_gaps(c, t))) if n > 1 else 0.0
        vel = np.max(np.abs(t * adot[i] + (n + 1 - 2 * k)))
        tq = np.max(np.abs(t * np.diff(p[i]) / c.mass - 2.0)) if n > 1 else 0.0
        rows.append((t, gap, vel, tq))
    return np.array(rows)


def residuals_decrease(column: np.ndarray, floor: float = 1e-9) -> bool:
    """True if a residual column stays below ``floor`` or ends below its start and never exceeds it."""
    column = np.asarray(column, dtype=float)
    if column.size == 0:
        return False
    if np.all(column <= floor):
        return True
    return bool(column[-1] < column[0] and np.all(column <= column[0]))


def stable_modes(c: TodaConstants) -> Tuple[np.ndarray, np.ndarray]:
    """Decaying linear modes about the parabolic solution.

    In ``s = log t`` with ``y = 2 log t + eta`` and ``t q = 2 + omega`` the
    deviation ``zeta`` from the parabolic ``eta`` obeys
    ``zeta'' - zeta' - K zeta = 0`` with ``K = 2 Delta diag(sigma)``. Each
    eigenvalue ``k > 0`` of ``K`` gives one growing and one decaying root;
    the decaying one is ``lam = (1 - sqrt(1 + 4k)) / 2``.

    Returns
    -------
    lam : ndarray
        Decay exponents, shape ``(n - 1,)``.
    modes : ndarray
        Matching gap directions as columns, unit length.
    """
    K = 2.0 * c.laplacian * c.sigma[None, :]
    k, V = np.linalg.eig(K)
    k, V = k.real, V.real
    o = np.argsort(k)
    k, V = k[o], V[:, o] / np.linalg.norm(V[:, o], axis=0)
    return (1.0 - np.sqrt(1.0 + 4.0 * k)) / 2.0, V


def perturbed_parabolic(c: TodaConstants, t: float, coeffs, center: float = 0.0) -> TodaState:
    """Parabolic state at ``t`` displaced along the decaying modes.

    ``coeffs[j]`` multiplies mode ``j`` of :func:`stable_modes`. Gaps move
    by ``zeta`` and relative momenta by ``lam zeta / t`` so that, to linear
    order, the orbit stays on the family of cluster solutions.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    base = parabolic_solution(c, c.n, t, center)
    lam, V = stable_modes(c)
    zeta = V @ coeffs
    omega = V @ (lam * coeffs)
    y = base.y + zeta
    q = base.q(c.mass) + omega / t
    a = np.concatenate([[0.0], np.cumsum(y)])
    a = a - a.mean() + center
    p = np.concatenate([[0.0], np.cumsum(c.mass * q)])
    p = p - p.mean()
    return TodaState(float(t), a, p)


def cluster_state(c: TodaConstants, t0: float, t1: float, coeffs, tol: float = 1e-12,
                  center: float = 0.0) -> TodaState:
    """State at ``t0`` of a cluster orbit displaced by about ``coeffs`` along the decaying modes.

    The displacement is placed at ``t1 > t0`` scaled by ``(t1 / t0)**lam``
    and integrated back to ``t0``. Backward in time the growing modes
    decay, so the result lies on the cluster family to integrator accuracy
    rather than only to linear order.
    """
    if not t1 > t0 > 0:
        raise NonPositiveTime(f"need t1 > t0 > 0, got t0 = {t0!r}, t1 = {t1!r}")
    lam, _ = stable_modes(c)
    far = perturbed_parabolic(c, t1, np.asarray(coeffs, dtype=float) * (t1 / t0) ** lam, center)
    return integrate(far, c, (t1, t0), tol=tol)[-1]
