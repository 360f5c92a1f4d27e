"""Performance functionals of empirical and limiting measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from onlineica.coeffs import Regularizer
from onlineica.errors import DomainError
from onlineica.pde import Grid1D, GridDensity
from onlineica.simulate import SimState


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray

    def auc(self) -> float:
        """Trapezoid area under (fpr, tpr), with the (0,0) and (1,1) corners added."""
        f = np.concatenate([[1.0], self.fpr, [0.0]])
        t = np.concatenate([[1.0], self.tpr, [0.0]])
        order = np.argsort(f, kind="stable")
        return float(np.trapezoid(t[order], f[order]))


@dataclass(frozen=True)
class DensityDistance:
    ks: float
    w1: float


@dataclass(frozen=True)
class Histogram:
    """A piecewise-constant density on a grid (empirical or from the PDE)."""

    grid: Grid1D
    density: np.ndarray

    def normalized(self) -> np.ndarray:
        m = self.density.sum() * self.grid.h
        if m <= 0:
            raise DomainError("histogram has no mass")
        return self.density / m


def histogram_on_grid(samples, grid: Grid1D) -> Histogram:
    """Bin samples into the grid's cells as a density; samples outside are clamped to the end cells."""
    samples = np.asarray(samples, dtype=float)
    idx = np.clip(np.floor((samples - grid.x_min) / grid.h).astype(np.int64), 0, grid.n_cells - 1)
    counts = np.bincount(idx, minlength=grid.n_cells).astype(float)
    return Histogram(grid, counts / (max(samples.size, 1) * grid.h))


def atom_histogram(d: GridDensity, xi_value: float) -> Histogram:
    return Histogram(d.grid, d.density[d.atom_index(xi_value)].copy())


def density_distance(a: Histogram, b: Histogram) -> DensityDistance:
    """KS and W1 distances between two densities on the same grid."""
    if a.grid != b.grid:
        raise DomainError("density_distance needs both inputs on the same grid")
    h = a.grid.h
    diff = np.cumsum(a.normalized() - b.normalized()) * h
    return DensityDistance(float(np.max(np.abs(diff))), float(h * np.sum(np.abs(diff))))


_FUNCTIONALS = {
    "correlation": lambda x, xi, phi: xi * x,
    "l2_error": lambda x, xi, phi: (x - xi) ** 2,
    "abs": lambda x, xi, phi: np.abs(x),
    "x_phi": lambda x, xi, phi: x * phi.phi(x),
}


def separable_metric(measure, h: str, phi: Regularizer | None = None) -> float:
    """Average of ``h(xi, x)`` under an empirical state or a limiting density."""
    try:
        func = _FUNCTIONALS[h]
    except KeyError:
        raise DomainError(f"unknown functional {h!r}; choose from {sorted(_FUNCTIONALS)}") from None
    phi = phi or Regularizer()
    if isinstance(measure, SimState):
        if h == "correlation":
            return measure.Qn
        return float(np.mean(func(measure.x, measure.xi.values, phi)))
    if isinstance(measure, GridDensity):
        return measure.moment(lambda x, xi: func(x, xi, phi))
    raise TypeError(f"unsupported measure type {type(measure).__name__}")


def default_thresholds(x_max: float, n: int = 200) -> np.ndarray:
    return np.concatenate([[0.0], np.logspace(-3, np.log10(x_max), n)])


def _rates(x_abs_pos, x_abs_neg, thresholds):
    th = np.asarray(thresholds, dtype=float)
    pos = np.sort(x_abs_pos)
    neg = np.sort(x_abs_neg)
    tpr = 1.0 - np.searchsorted(pos, th, side="right") / pos.size
    fpr = 1.0 - np.searchsorted(neg, th, side="right") / neg.size
    return RocCurve(th, tpr, fpr)


def roc_from_samples(x, support_mask, thresholds) -> RocCurve:
    support_mask = np.asarray(support_mask, dtype=bool)
    if support_mask.all() or not support_mask.any():
        raise DomainError("support recovery needs both zero and nonzero entries in xi")
    x = np.abs(np.asarray(x, dtype=float))
    return _rates(x[support_mask], x[~support_mask], thresholds)


def roc_from_simulation(state: SimState, thresholds) -> RocCurve:
    """Declare ``xi_i != 0`` when ``|x_i| > threshold``."""
    return roc_from_samples(state.x, state.xi.values != 0, thresholds)


def _tail_mass(d: GridDensity, j: int, thresholds) -> np.ndarray:
    # density is piecewise constant per cell, so the CDF is piecewise linear between faces
    h = d.grid.h
    faces = d.grid.faces
    cdf = np.concatenate([[0.0], np.cumsum(d.density[j]) * h])
    total = cdf[-1]
    th = np.asarray(thresholds, dtype=float)
    inside = np.interp(th, faces, cdf) - np.interp(-th, faces, cdf)
    return (total - inside) / total


def roc_from_pde(d: GridDensity, thresholds) -> RocCurve:
    zero = np.nonzero(d.xi == 0)[0]
    nonzero = np.nonzero(d.xi != 0)[0]
    if zero.size == 0 or nonzero.size == 0:
        raise DomainError("roc_from_pde needs a xi = 0 atom and at least one nonzero atom")
    w = d.weights[nonzero] / d.weights[nonzero].sum()
    tpr = sum(wj * _tail_mass(d, j, thresholds) for wj, j in zip(w, nonzero))
    fpr = _tail_mass(d, zero[0], thresholds)
    return RocCurve(np.asarray(thresholds, dtype=float), np.asarray(tpr), np.asarray(fpr))
