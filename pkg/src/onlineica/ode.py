"""Order-parameter ODEs and their fixed-point structure.

``rhs_general`` is ``dQ/dt = (Q^2 - 1) G(Q) - Q Lambda(Q) / 2`` (no
regularizer).  ``rhs_example1`` is the closed form for ``f = x^3`` in terms of
``q = Q^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from onlineica.coeffs import CoeffContext, g_coeff, lambda_coeff
from onlineica.errors import ConfigError, DomainError, IntegratorError
from onlineica.model import StepSchedule

_SCAN_POINTS = 10_000
_ROOT_TOL = 1e-10


@dataclass
class OdeSolution:
    times: np.ndarray
    q: np.ndarray
    out_of_range: bool = False

    @property
    def Q(self) -> np.ndarray:
        return np.sqrt(np.clip(self.q, 0.0, None))


@dataclass
class FixedPoint:
    q: float
    stable: bool


@dataclass
class BifurcationResult:
    tau_c: float | None
    branches: list  # (tau, q_unstable | None, q_stable | None)


def rhs_general(ctx: CoeffContext, Q: float) -> float:
    if not ctx.phi.is_none:
        raise ConfigError("the closed Q-equation needs phi = none; use the PDE solver")
    return (Q * Q - 1.0) * g_coeff(ctx, Q) - 0.5 * Q * lambda_coeff(ctx, Q)


def rhs_example1(tau, q, m4: float, m6: float):
    q = np.asarray(q, dtype=float)
    d4 = m4 - 3.0
    return -2.0 * tau * q**2 * (1.0 - q) * d4 - tau**2 * q * (
        15.0 * q**2 * (1.0 - q) * d4 + q**3 * (m6 - 15.0) + 15.0
    )


def cube_rhs(schedule: StepSchedule | float, m4: float, m6: float) -> Callable[[float, float], float]:
    """``(t, q) -> dq/dt`` for the cube nonlinearity with a possibly time-varying step."""
    if not isinstance(schedule, StepSchedule):
        schedule = StepSchedule.constant(schedule)
    return lambda t, q: float(rhs_example1(schedule.tau(t), q, m4, m6))


def general_rhs_q(ctx: CoeffContext, schedule: StepSchedule | None = None) -> Callable[[float, float], float]:
    """``(t, q) -> dq/dt = 2 Q dQ/dt`` on the branch ``Q = +sqrt(q)``."""

    def rhs(t, q):
        c = ctx if schedule is None else ctx.with_tau(schedule.tau(t))
        Q = float(np.sqrt(min(max(q, 0.0), 1.0)))
        return 2.0 * Q * rhs_general(c, Q)

    return rhs


def integrate(rhs: Callable[[float, float], float], q0: float, t_end: float, dt: float = 1e-3,
              record_every: int = 1) -> OdeSolution:
    """Classical fixed-step RK4 for ``dq/dt = rhs(t, q)``.

    The last step is shortened to land on ``t_end``.  Leaving ``[0, 1]`` by
    more than 1e-9 is flagged in ``out_of_range``, not corrected.
    """
    if not 0.0 <= q0 <= 1.0:
        raise DomainError(f"q0={q0} outside [0, 1]")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    n_full = int(np.floor(t_end / dt + 1e-9))
    rem = t_end - n_full * dt
    hs = [dt] * n_full + ([rem] if rem > 1e-12 else [])
    t, q = 0.0, float(q0)
    ts, qs = [t], [q]
    oor = False
    for i, h in enumerate(hs):
        try:
            k1 = rhs(t, q)
            k2 = rhs(t + h / 2, q + h / 2 * k1)
            k3 = rhs(t + h / 2, q + h / 2 * k2)
            k4 = rhs(t + h, q + h * k3)
            q = q + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        except (OverflowError, FloatingPointError) as e:
            raise IntegratorError(f"overflow at step {i + 1} (t={t}): {e}") from e
        t = (i + 1) * dt if h == dt else t_end
        if not np.isfinite(q):
            raise IntegratorError(f"non-finite q at step {i + 1} (t={t})")
        if q < -1e-9 or q > 1 + 1e-9:
            oor = True
        if (i + 1) % record_every == 0 or i == len(hs) - 1:
            ts.append(t)
            qs.append(q)
    return OdeSolution(np.array(ts), np.array(qs), oor)


def _bisect(fun, a: float, b: float, tol: float = _ROOT_TOL) -> float:
    fa = fun(a)
    while b - a > tol:
        m = 0.5 * (a + b)
        fm = fun(m)
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def _reduced(tau, m4, m6):
    # rhs / q; shares the roots of rhs on (0, 1] and is bounded away from the trivial root
    return lambda q: -2.0 * tau * q * (1.0 - q) * (m4 - 3.0) - tau**2 * (
        15.0 * q**2 * (1.0 - q) * (m4 - 3.0) + q**3 * (m6 - 15.0) + 15.0
    )


def find_fixed_points(tau: float, m4: float, m6: float) -> list[FixedPoint]:
    """Nontrivial roots of ``rhs_example1`` on ``(0, 1]`` with stability labels."""
    if not tau > 0:
        raise DomainError("tau must be positive")
    h = _reduced(tau, m4, m6)
    grid = np.linspace(1.0 / _SCAN_POINTS, 1.0, _SCAN_POINTS)
    vals = h(grid)
    brackets = [(grid[i], grid[i + 1]) for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]]
    # grid may straddle a narrow hump entirely; refine local maxima that stay on the wrong side
    peaks = np.nonzero((vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:]) & (vals[1:-1] <= 0))[0] + 1
    for i in peaks:
        res = minimize_scalar(lambda q: -h(q), bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                              options={"xatol": 1e-14})
        if -res.fun > 0:
            brackets += [(grid[i - 1], res.x), (res.x, grid[i + 1])]
    roots = sorted(_bisect(h, a, b) for a, b in brackets)
    out = []
    for r in roots:
        eps = 1e-6
        lo, hi = max(r - eps, 0.0), min(r + eps, 1.0)
        deriv = (rhs_example1(tau, hi, m4, m6) - rhs_example1(tau, lo, m4, m6)) / (hi - lo)
        out.append(FixedPoint(float(r), bool(deriv < 0)))
    return out


def _has_informative_branch(tau, m4, m6) -> bool:
    return len(find_fixed_points(tau, m4, m6)) > 0


def find_tau_c(m4: float, m6: float, tau_max: float = 10.0, tol: float = 1e-8) -> float:
    """Largest step size at which the informative fixed points exist.

    Bisection on ``tau`` over root existence.  Raises ``DomainError`` when no
    bracket exists in ``(0, tau_max]``.
    """
    lo, hi = 1e-6, tau_max
    if not _has_informative_branch(lo, m4, m6):
        raise DomainError(f"no informative fixed point even at tau={lo} (m4={m4}); nothing to bracket")
    if _has_informative_branch(hi, m4, m6):
        raise DomainError(f"informative fixed points persist at tau_max={tau_max}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _has_informative_branch(mid, m4, m6):
            lo = mid
        else:
            hi = mid
    return lo


def bifurcation(taus, m4: float, m6: float) -> BifurcationResult:
    try:
        tau_c = find_tau_c(m4, m6)
    except DomainError:
        tau_c = None
    branches = []
    for tau in taus:
        fps = find_fixed_points(tau, m4, m6)
        qu = next((fp.q for fp in fps if not fp.stable), None)
        qs = next((fp.q for fp in reversed(fps) if fp.stable), None)
        branches.append((float(tau), qu, qs))
    return BifurcationResult(tau_c, branches)


def g_curve(tau: float, q, m4: float, m6: float):
    """``g(q) = (1/tau) dq/dt``."""
    return rhs_example1(tau, q, m4, m6) / tau
