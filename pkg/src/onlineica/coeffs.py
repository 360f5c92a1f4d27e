"""Drift and diffusion coefficients of the scaling limit.

With ``u = c Q + e sqrt(1 - Q^2)``, ``c ~ P_c``, ``e ~ N(0, 1)`` and ``<.>``
the joint average::

    Lambda(Q)        = tau^2 <f(u)^2>
    G(Q)             = g_sign * (-tau <f(u) c> + tau Q <f'(u)>)
    Gamma(x,xi,Q,R)  = x (Q G + tau R - Lambda/2) - xi G - tau phi(x)

Averages are exact finite sums over source atoms times Gauss-Hermite nodes.
``g_sign`` equals the sign of the f-step in the finite-n update (see
``onlineica.simulate.AlgoConfig.update_sign``); it multiplies every odd
power of ``f`` and is calibrated against the Monte-Carlo drift oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from onlineica.errors import ConfigError, DomainError, SingularPotentialError
from onlineica.model import SourceDist

NONLINEARITIES = ("cube", "neg_cube", "square", "neg_square", "tanh", "neg_tanh")
REGULARIZERS = ("none", "l2", "l1")


@dataclass(frozen=True)
class Nonlinearity:
    kind: str = "cube"

    def __post_init__(self):
        if self.kind not in NONLINEARITIES:
            raise ConfigError(f"unknown nonlinearity {self.kind!r}; choose from {NONLINEARITIES}")

    @property
    def _sign(self) -> float:
        return -1.0 if self.kind.startswith("neg_") else 1.0

    @property
    def base(self) -> str:
        return self.kind.removeprefix("neg_")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.base == "cube":
            return self._sign * x**3
        if self.base == "square":
            return self._sign * x**2
        return self._sign * np.tanh(x)

    def prime(self, x):
        x = np.asarray(x, dtype=float)
        if self.base == "cube":
            return self._sign * 3.0 * x**2
        if self.base == "square":
            return self._sign * 2.0 * x
        return self._sign / np.cosh(x) ** 2


@dataclass(frozen=True)
class Regularizer:
    """Element-wise map ``phi`` and its antiderivative ``Phi``.

    ``l2``: ``phi = beta x``; ``l1``: ``phi = beta sgn(x)`` with ``sgn(0) = 0``.
    """

    kind: str = "none"
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in REGULARIZERS:
            raise ConfigError(f"unknown regularizer {self.kind!r}; choose from {REGULARIZERS}")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")

    @property
    def is_none(self) -> bool:
        return self.kind == "none" or self.beta == 0.0

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "l2":
            return self.beta * x
        if self.kind == "l1":
            return self.beta * np.sign(x)
        return np.zeros_like(x)

    def Phi(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "l2":
            return 0.5 * self.beta * x**2
        if self.kind == "l1":
            return self.beta * np.abs(x)
        return np.zeros_like(x)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule normalized for the standard normal density."""

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_hermite(cls, n_nodes: int = 40) -> QuadratureRule:
        if n_nodes < 1:
            raise ConfigError("need at least one quadrature node")
        x, w = np.polynomial.hermite.hermgauss(n_nodes)
        return cls(np.sqrt(2.0) * x, w / np.sqrt(np.pi))

    def expect(self, func) -> float:
        return float(self.weights @ func(self.nodes))


@dataclass(frozen=True)
class CoeffContext:
    f: Nonlinearity
    phi: Regularizer
    source: SourceDist
    tau: float
    g_sign: int = 1
    quad: QuadratureRule = field(default_factory=QuadratureRule.gauss_hermite)

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.g_sign not in (1, -1):
            raise ConfigError("g_sign must be +1 or -1")

    def with_tau(self, tau: float) -> CoeffContext:
        return replace(self, tau=float(tau))


def _check_q(Q: float) -> None:
    if not abs(Q) <= 1.0:
        raise DomainError(f"|Q| = {abs(Q)!r} exceeds 1")


def gauss_average(ctx: CoeffContext, Q: float, integrand: str) -> float:
    """``<h(cQ + e sqrt(1-Q^2))>`` for ``h`` in ``{f_sq, f_times_c, f_prime}``."""
    _check_q(Q)
    s = np.sqrt(max(0.0, 1.0 - Q * Q))
    c = ctx.source.values[:, None]
    u = c * Q + ctx.quad.nodes[None, :] * s
    if integrand == "f_sq":
        vals = ctx.f(u) ** 2
    elif integrand == "f_times_c":
        vals = ctx.f(u) * c
    elif integrand == "f_prime":
        vals = ctx.f.prime(u)
    else:
        raise ValueError(f"unknown integrand {integrand!r}")
    return float(ctx.source.weights @ vals @ ctx.quad.weights)


def lambda_coeff(ctx: CoeffContext, Q: float) -> float:
    return ctx.tau**2 * gauss_average(ctx, Q, "f_sq")


def g_coeff(ctx: CoeffContext, Q: float) -> float:
    raw = -ctx.tau * gauss_average(ctx, Q, "f_times_c") + ctx.tau * Q * gauss_average(ctx, Q, "f_prime")
    return ctx.g_sign * raw


def gamma_coeff(ctx: CoeffContext, x, xi, Q: float, R: float):
    """Limit drift; vectorized over ``x`` and ``xi``."""
    G = g_coeff(ctx, Q)
    Lam = lambda_coeff(ctx, Q)
    return _gamma(ctx, np.asarray(x, dtype=float), np.asarray(xi, dtype=float), Q, R, G, Lam)


def _gamma(ctx, x, xi, Q, R, G, Lam):
    return x * (Q * G + ctx.tau * R - 0.5 * Lam) - xi * G - ctx.tau * ctx.phi.phi(x)


def effective_potential(ctx: CoeffContext, Q: float, R: float) -> tuple[float, float]:
    """Curvature ``d`` and shift ``b`` of ``E(x, xi) = d/2 (x - b xi)^2 + tau Phi(x)``.

    With these, ``-dE/dx = Gamma`` wherever ``phi`` is differentiable.  Note
    ``d`` is the coefficient multiplying ``x`` in ``Gamma`` with the sign
    flipped, so a contracting drift gives ``d > 0``.
    """
    G = g_coeff(ctx, Q)
    Lam = lambda_coeff(ctx, Q)
    d = -(Q * G - 0.5 * Lam + ctx.tau * R)
    if abs(d) < 1e-14:
        raise SingularPotentialError(f"effective curvature d={d!r} vanishes at Q={Q}, R={R}")
    return d, -G / d


def potential_energy(ctx: CoeffContext, x, xi, Q: float, R: float):
    d, b = effective_potential(ctx, Q, R)
    x = np.asarray(x, dtype=float)
    return 0.5 * d * (x - b * np.asarray(xi)) ** 2 + ctx.tau * ctx.phi.Phi(x)


def closed_form_lambda_cube(tau: float, Q: float, m4: float, m6: float) -> float:
    q2 = Q * Q
    return tau**2 * (15.0 + 15.0 * q2**2 * (1.0 - q2) * (m4 - 3.0) + q2**3 * (m6 - 15.0))


def closed_form_g_cube(tau: float, Q: float, m4: float) -> float:
    return tau * Q**3 * (m4 - 3.0)
