"""Finite-volume solver for the limiting nonlinear Fokker-Planck equation.

For each atom ``xi_j`` of the prior the conditional density ``P(x | xi_j)``
obeys::

    dP/dt = -d/dx [Gamma(x, xi_j, Q_t, R_t) P] + Lambda(Q_t)/2 * d2P/dx2

with ``Q_t = sum_j w_j xi_j int x P dx`` and ``R_t = sum_j w_j int x phi(x) P dx``.

Scheme: explicit Euler in time, donor-cell upwind drift with velocities at
cell centers, central diffusion, no-flux walls.  The couplings are taken
from the pre-step density.  Under the time-step bound used here the update
is a convex combination of old cell values, so it preserves positivity and
per-atom mass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from onlineica.coeffs import CoeffContext, Regularizer, _gamma, g_coeff, lambda_coeff
from onlineica.errors import ConfigError, DomainError, DomainTooSmallError, StepSizeError
from onlineica.model import PriorMeasure, StepSchedule

log = logging.getLogger(__name__)

SAFETY = 0.9
_EDGE_CELLS = 4


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_cells: int

    def __post_init__(self):
        if self.n_cells < 64:
            raise ConfigError("need at least 64 cells")
        if not self.x_max > self.x_min:
            raise ConfigError("x_max must exceed x_min")

    @classmethod
    def symmetric(cls, half_width: float, n_cells: int = 1024) -> Grid1D:
        # even n_cells on a symmetric box keeps x = 0 on a face, never at a center
        if n_cells % 2:
            raise ConfigError("n_cells must be even so that no cell straddles x = 0")
        return cls(-half_width, half_width, n_cells)

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + self.h * (np.arange(self.n_cells) + 0.5)

    @property
    def faces(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.n_cells + 1)


def auto_grid(prior: PriorMeasure, q0: float, n_cells: int = 1024, half_width: float = 8.0) -> Grid1D:
    """Default box ``[-8, 8]``, widened to hold every initial conditional to +-6 sd."""
    sd = np.sqrt(max(1.0 - q0, 0.0))
    need = float(np.max(np.abs(np.sqrt(q0) * prior.values))) + 6.0 * sd
    return Grid1D.symmetric(max(half_width, need), n_cells)


@dataclass
class GridDensity:
    grid: Grid1D
    xi: np.ndarray
    weights: np.ndarray
    density: np.ndarray  # (n_atoms, n_cells)
    t: float = 0.0

    def mass(self) -> np.ndarray:
        return self.density.sum(axis=1) * self.grid.h

    def moment(self, func) -> float:
        """``sum_j w_j int func(x, xi_j) P(x | xi_j) dx`` by the midpoint rule."""
        x = self.grid.centers
        vals = func(x[None, :], self.xi[:, None]) * self.density
        return float(self.weights @ vals.sum(axis=1)) * self.grid.h

    def second_moment(self) -> float:
        return self.moment(lambda x, xi: x * x)

    def atom_index(self, xi_value: float) -> int:
        j = int(np.argmin(np.abs(self.xi - xi_value)))
        if abs(self.xi[j] - xi_value) > 1e-9:
            raise KeyError(f"no atom at xi={xi_value}")
        return j


@dataclass
class PdeSolution:
    times: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    snapshots: list = field(default_factory=list)
    final: GridDensity | None = None
    clipped: float = 0.0

    def snapshot(self, t: float) -> GridDensity:
        for s in self.snapshots:
            if abs(s.t - t) < 1e-9:
                return s
        raise KeyError(f"no snapshot at t={t}")


def init_density(prior: PriorMeasure, q0: float, grid: Grid1D) -> GridDensity:
    """Per-atom Gaussian ``N(sqrt(q0) xi_j, 1 - q0)`` sampled at cell centers, unit mass."""
    if not 0.0 <= q0 < 1.0:
        raise DomainError(f"q0={q0} must lie in [0, 1); q0 = 1 is a point mass")
    mu = np.sqrt(q0) * prior.values[:, None]
    sd = np.sqrt(1.0 - q0)
    outside = ndtr((grid.x_min - mu[:, 0]) / sd) + ndtr(-(grid.x_max - mu[:, 0]) / sd)
    if np.any(outside > 1e-6):
        raise ConfigError(f"grid too narrow: initial mass outside box up to {outside.max():.2e}")
    x = grid.centers[None, :]
    dens = np.exp(-0.5 * ((x - mu) / sd) ** 2)
    dens /= dens.sum(axis=1, keepdims=True) * grid.h
    return GridDensity(grid, prior.values.copy(), prior.weights.copy(), dens, 0.0)


def compute_couplings(d: GridDensity, phi: Regularizer) -> tuple[float, float]:
    Q = d.moment(lambda x, xi: xi * x)
    if phi.is_none:
        return Q, 0.0
    return Q, d.moment(lambda x, xi: x * phi.phi(x))


def stable_dt(d: GridDensity, ctx: CoeffContext, Q: float, R: float) -> float:
    """Largest dt keeping the explicit update a convex combination (times SAFETY)."""
    h = d.grid.h
    G = g_coeff(ctx, Q)
    Lam = lambda_coeff(ctx, Q)
    v = _gamma(ctx, d.grid.centers[None, :], d.xi[:, None], Q, R, G, Lam)
    rate = np.max(np.abs(v)) / h + Lam / h**2
    return SAFETY / rate if rate > 0 else np.inf


def _fp_update(dens, v, D, h, dt):
    flux = np.zeros((dens.shape[0], dens.shape[1] + 1))
    vl = np.maximum(v[:, :-1], 0.0)
    vr = np.minimum(v[:, 1:], 0.0)
    flux[:, 1:-1] = vl * dens[:, :-1] + vr * dens[:, 1:] - D * (dens[:, 1:] - dens[:, :-1]) / h
    return dens - (dt / h) * (flux[:, 1:] - flux[:, :-1])


def step_fp(d: GridDensity, ctx: CoeffContext, dt: float) -> GridDensity:
    """One explicit finite-volume step; raises ``StepSizeError`` if ``dt`` is too large."""
    Q, R = compute_couplings(d, ctx.phi)
    G = g_coeff(ctx, Q)
    Lam = lambda_coeff(ctx, Q)
    h = d.grid.h
    v = _gamma(ctx, d.grid.centers[None, :], d.xi[:, None], Q, R, G, Lam)
    bound = SAFETY / (np.max(np.abs(v)) / h + Lam / h**2)
    if dt > bound * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:.3e} exceeds stability bound {bound:.3e}")
    new = _fp_update(d.density, v, 0.5 * Lam, h, dt)
    return GridDensity(d.grid, d.xi, d.weights, new, d.t + dt)


def _edge_mass(d: GridDensity) -> float:
    k = _EDGE_CELLS
    edge = d.density[:, :k].sum(axis=1) + d.density[:, -k:].sum(axis=1)
    return float(np.max(edge) * d.grid.h)


def solve(
    ctx: CoeffContext,
    prior: PriorMeasure,
    q0: float,
    T: float,
    grid: Grid1D | None = None,
    schedule: StepSchedule | None = None,
    snapshot_times=(),
    dt_max: float = 1e-2,
    record_dt: float | None = None,
    leak_tol: float = 1e-4,
) -> PdeSolution:
    """Advance the PDE from ``t = 0`` to ``T`` under the adaptive stability bound.

    ``Q`` and ``R`` are recorded at every step unless ``record_dt`` is given.
    Steps are shortened to land exactly on snapshot times.
    """
    grid = grid or auto_grid(prior, q0)
    d = init_density(prior, q0, grid)
    snaps = sorted(float(t) for t in snapshot_times)
    if snaps and (snaps[0] < 0 or snaps[-1] > T + 1e-12):
        raise DomainError("snapshot time outside [0, T]")
    h = grid.h
    x = grid.centers[None, :]
    xi = d.xi[:, None]
    dens = d.density
    t = 0.0
    times, Qs, Rs = [], [], []
    snapshots = []
    clipped = 0.0
    next_rec = 0.0

    wxi = d.weights * d.xi
    xphi = grid.centers * ctx.phi.phi(grid.centers)

    def couplings(dens):
        Q = float(wxi @ (dens @ grid.centers)) * h
        R = 0.0 if ctx.phi.is_none else float(d.weights @ (dens @ xphi)) * h
        return Q, R

    def snap_if_due(t, dens):
        while snaps and abs(snaps[0] - t) < 1e-9:
            snapshots.append(GridDensity(grid, d.xi, d.weights, dens.copy(), snaps.pop(0)))

    snap_if_due(0.0, dens)
    while True:
        Q, R = couplings(dens)
        if record_dt is None or t >= next_rec - 1e-12 or t >= T - 1e-12:
            times.append(t)
            Qs.append(Q)
            Rs.append(R)
            if record_dt is not None:
                next_rec += record_dt
        if t >= T - 1e-12:
            break
        c = ctx if schedule is None else ctx.with_tau(schedule.tau(t))
        G = g_coeff(c, Q)
        Lam = lambda_coeff(c, Q)
        v = _gamma(c, x, xi, Q, R, G, Lam)
        dt = min(SAFETY / (np.max(np.abs(v)) / h + Lam / h**2), dt_max, T - t)
        if snaps and snaps[0] - t < dt:
            dt = snaps[0] - t
        if record_dt is not None and next_rec - t < dt and next_rec - t > 1e-12:
            dt = next_rec - t
        dens = _fp_update(dens, v, 0.5 * Lam, h, dt)
        neg = dens < 0
        if np.any(neg):
            clipped = max(clipped, float(-dens[neg].min()))
            if clipped > 1e-12:
                log.warning("clipping negative density %.3e at t=%.4f", clipped, t)
            dens[neg] = 0.0
        t = t + dt
        snap_if_due(t, dens)
        leak = _edge_mass(GridDensity(grid, d.xi, d.weights, dens, t))
        if leak > leak_tol:
            raise DomainTooSmallError(f"mass {leak:.2e} reached the box edge at t={t:.3f}; widen the grid")
    final = GridDensity(grid, d.xi, d.weights, dens, T)
    return PdeSolution(np.array(times), np.array(Qs), np.array(Rs), snapshots, final, clipped)
