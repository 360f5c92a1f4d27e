"""Generative data model: feature vectors, priors and source laws.

Observations follow ``y = xi * c / sqrt(n) + a`` with ``a ~ N(0, I - xi xi^T / n)``
and ``||xi||^2 = n``.  The noise is drawn by projecting a standard Gaussian
vector onto the orthogonal complement of ``xi``, which is exact and O(n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from onlineica.errors import ConfigError, DomainError

_TOL = 1e-12


def _check_weights(weights: np.ndarray, what: str) -> None:
    if np.any(weights < 0):
        raise ConfigError(f"{what}: weights must be nonnegative")
    if abs(weights.sum() - 1.0) > _TOL:
        raise ConfigError(f"{what}: weights sum to {weights.sum()!r}, not 1")


@dataclass(frozen=True)
class SourceDist:
    """Finite-atom law of the non-Gaussian source ``c`` (zero mean, unit variance)."""

    values: np.ndarray
    weights: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if v.shape != w.shape or v.size == 0:
            raise ConfigError("source: values and weights must be nonempty and of equal length")
        _check_weights(w, "source")
        mean = float(w @ v)
        var = float(w @ v**2)
        if abs(mean) > _TOL or abs(var - 1.0) > _TOL:
            raise ConfigError(f"source: need mean 0 and variance 1, got mean={mean!r}, var={var!r}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_atoms(cls, values: Sequence[float], weights: Sequence[float], name="custom", standardize=False):
        v = np.asarray(values, dtype=float)
        w = np.asarray(weights, dtype=float)
        if standardize:
            w = w / w.sum()
            v = v - w @ v
            v = v / np.sqrt(w @ v**2)
        return cls(v, w, name)

    @property
    def m4(self) -> float:
        return float(self.weights @ self.values**4)

    @property
    def m6(self) -> float:
        return float(self.weights @ self.values**6)

    def sample(self, rng: np.random.Generator, size=None):
        idx = rng.choice(self.values.size, size=size, p=self.weights)
        return self.values[idx]


def rademacher() -> SourceDist:
    return SourceDist(np.array([-1.0, 1.0]), np.array([0.5, 0.5]), "rademacher")


def sparse_ternary(p: float = 1.0 / 3.0) -> SourceDist:
    """Atoms ``{-1/sqrt(p), 0, 1/sqrt(p)}`` with weights ``{p/2, 1-p, p/2}``; ``m4 = 1/p``."""
    if not 0 < p <= 1:
        raise DomainError("sparse_ternary: p must lie in (0, 1]")
    a = 1.0 / np.sqrt(p)
    return SourceDist(np.array([-a, 0.0, a]), np.array([p / 2, 1.0 - p, p / 2]), f"ternary({p:g})")


def three_atom() -> SourceDist:
    """``{-sqrt3, 0, sqrt3}`` with weights ``{1/6, 2/3, 1/6}``: m4 = 3, m6 = 9."""
    s3 = np.sqrt(3.0)
    return SourceDist(np.array([-s3, 0.0, s3]), np.array([1 / 6, 2 / 3, 1 / 6]), "three_atom")


def source_moments(dist: SourceDist) -> tuple[float, float]:
    """Fourth and sixth moments of the source."""
    return dist.m4, dist.m6


@dataclass(frozen=True)
class PriorMeasure:
    """Discrete limiting law of the entries of ``xi``.  Second moment must be 1."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if v.shape != w.shape or v.size == 0:
            raise ConfigError("prior: values and weights must be nonempty and of equal length")
        _check_weights(w, "prior")
        m2 = float(w @ v**2)
        if abs(m2 - 1.0) > _TOL:
            raise ConfigError(f"prior: second moment is {m2!r}, need 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def point(cls, value: float = 1.0) -> PriorMeasure:
        return cls(np.array([value]), np.array([1.0]))

    @classmethod
    def sparse(cls, rho: float) -> PriorMeasure:
        """``(1 - rho) delta(0) + rho delta(1/sqrt(rho))``."""
        if not 0 < rho <= 1:
            raise DomainError(f"rho={rho} outside (0, 1]")
        if rho == 1:
            return cls.point(1.0)
        return cls(np.array([0.0, 1.0 / np.sqrt(rho)]), np.array([1.0 - rho, rho]))

    @property
    def n_atoms(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class FeatureVector:
    """The hidden direction ``xi`` with ``||xi||^2 = n``.

    ``labels[i]`` is the index of the prior atom coordinate ``i`` was drawn
    from; it survives the final rescaling, so conditional statistics can be
    grouped by atom even when values were nudged to fix the norm.
    """

    values: np.ndarray
    labels: np.ndarray | None = None
    prior: PriorMeasure | None = None

    @property
    def n(self) -> int:
        return self.values.size

    def atom_mask(self, j: int) -> np.ndarray:
        if self.labels is None:
            raise ValueError("feature vector carries no atom labels")
        return self.labels == j


def _rescale(v: np.ndarray) -> np.ndarray:
    nrm2 = float(v @ v)
    if nrm2 == 0:
        raise DomainError("feature vector is identically zero")
    return v * np.sqrt(v.size / nrm2)


def make_sparse_feature(n: int, rho: float, rng_seed=None) -> FeatureVector:
    """``round(rho*n)`` entries equal to ``1/sqrt(rho)`` at random positions, the rest 0."""
    if not 0 < rho <= 1:
        raise DomainError(f"rho={rho} outside (0, 1]")
    k = int(np.floor(rho * n + 0.5))
    if k < 1:
        raise DomainError(f"round(rho*n) = {k}; need at least one nonzero entry")
    rng = np.random.default_rng(rng_seed)
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.choice(n, size=k, replace=False)] = 1
    # sqrt(n/k) == 1/sqrt(rho) whenever rho*n is an integer
    values = np.where(labels == 1, np.sqrt(n / k), 0.0)
    values = _rescale(values)
    if k == n:
        return FeatureVector(values, np.zeros(n, dtype=np.int64), PriorMeasure.point(1.0))
    return FeatureVector(values, labels, PriorMeasure.sparse(rho))


def _interleaved_labels(n: int, weights: np.ndarray) -> np.ndarray:
    # smooth weighted round-robin: counts stay within one of n*w_j at every prefix
    counts = np.zeros(weights.size)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        j = int(np.argmax(weights * (i + 1) - counts))
        labels[i] = j
        counts[j] += 1
    return labels


def feature_from_prior(n: int, prior: PriorMeasure, mode: str = "iid", rng_seed=None) -> FeatureVector:
    """Build ``xi`` whose empirical measure approximates ``prior``.

    ``mode="iid"`` draws entries independently; ``mode="deterministic"``
    interleaves atoms in proportion to their weights, e.g. the prior
    ``0.5 delta(0) + 0.5 delta(sqrt 2)`` gives ``(0, sqrt2, 0, sqrt2, ...)``.
    """
    if mode == "iid":
        rng = np.random.default_rng(rng_seed)
        labels = rng.choice(prior.n_atoms, size=n, p=prior.weights)
    elif mode == "deterministic":
        labels = _interleaved_labels(n, prior.weights)
    else:
        raise ConfigError(f"unknown feature mode {mode!r}")
    return FeatureVector(_rescale(prior.values[labels]), labels, prior)


def sample_observation(xi: FeatureVector, c: float, rng) -> np.ndarray:
    """One observation ``y = xi c / sqrt(n) + a`` for a given source draw ``c``."""
    rng = np.random.default_rng(rng)
    v = xi.values
    n = v.size
    g = rng.standard_normal(n)
    a = g - (v @ g / n) * v
    return v * (c / np.sqrt(n)) + a


@dataclass(frozen=True)
class StepSchedule:
    """Step size ``tau(t)`` in rescaled time ``t = k/n``.

    A table schedule interpolates linearly between ``(t, tau)`` knots and is
    held constant outside them.
    """

    kind: str = "constant"
    tau0: float = 0.1
    table: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in ("constant", "table"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and not self.tau0 > 0:
            raise ConfigError("tau0 must be positive")
        if self.kind == "table":
            if len(self.table) == 0:
                raise ConfigError("table schedule needs at least one (t, tau) pair")
            ts = np.array([p[0] for p in self.table], dtype=float)
            taus = np.array([p[1] for p in self.table], dtype=float)
            if np.any(np.diff(ts) <= 0):
                raise ConfigError("schedule table times must be strictly increasing")
            if np.any(taus <= 0):
                raise ConfigError("schedule table step sizes must be positive")

    @classmethod
    def constant(cls, tau: float) -> StepSchedule:
        return cls("constant", float(tau))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def tau(self, t: float) -> float:
        if self.kind == "constant":
            return self.tau0
        ts = [p[0] for p in self.table]
        taus = [p[1] for p in self.table]
        return float(np.interp(t, ts, taus))
