"""Finite-n online ICA, the decoupled particle process, and the moment oracle.

One step of the algorithm (``update_sign`` = +1 is the plain update)::

    x_tilde = x + update_sign * tau/sqrt(n) * f(y.x / sqrt(n)) * y - tau/n * phi(x)
    x_next  = sqrt(n) * x_tilde / ||x_tilde||

Time is rescaled as ``t = k/n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from onlineica.coeffs import (
    CoeffContext,
    Nonlinearity,
    QuadratureRule,
    Regularizer,
    _gamma,
    g_coeff,
    lambda_coeff,
)
from onlineica.errors import ConfigError, DegenerateStateError, DomainError
from onlineica.model import FeatureVector, SourceDist, StepSchedule

_CHUNK_BYTES = 16 * 2**20


@dataclass(frozen=True)
class AlgoConfig:
    """Algorithm knobs: nonlinearity, regularizer, step schedule, step sign.

    ``update_sign = -1`` flips the direction of the f-step.  With ``f = x^3``
    this turns kurtosis ascent into descent, which is what recovers
    sub-Gaussian sources such as Rademacher.
    """

    f: Nonlinearity = field(default_factory=Nonlinearity)
    phi: Regularizer = field(default_factory=Regularizer)
    schedule: StepSchedule = field(default_factory=StepSchedule)
    update_sign: int = 1

    def __post_init__(self):
        if self.update_sign not in (1, -1):
            raise ConfigError("update_sign must be +1 or -1")

    def context(self, source: SourceDist, g_sign: int | None = None, t: float = 0.0,
                n_nodes: int = 40) -> CoeffContext:
        """Coefficient context at time ``t``; ``g_sign`` defaults to ``update_sign``."""
        return CoeffContext(
            f=self.f,
            phi=self.phi,
            source=source,
            tau=self.schedule.tau(t),
            g_sign=self.update_sign if g_sign is None else g_sign,
            quad=QuadratureRule.gauss_hermite(n_nodes),
        )


@dataclass(frozen=True)
class SimState:
    k: int
    x: np.ndarray
    xi: FeatureVector
    Qn: float
    Rn: float

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def t(self) -> float:
        return self.k / self.n


@dataclass
class Trajectory:
    """Order-parameter time series plus optional raw snapshots of ``x``."""

    times: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    xi: FeatureVector | None = None
    snapshots: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if not (self.times.shape == self.Q.shape == self.R.shape):
            raise ValueError("times, Q and R must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


def _order_params(x, xi_v, phi: Regularizer):
    n = x.size
    return float(xi_v @ x) / n, float(x @ phi.phi(x)) / n


def make_state(x, xi: FeatureVector, phi: Regularizer, k: int = 0) -> SimState:
    x = np.asarray(x, dtype=float)
    Q, R = _order_params(x, xi.values, phi)
    return SimState(k, x, xi, Q, R)


def init_state(xi: FeatureVector, q0: float, rng=None, phi: Regularizer | None = None) -> SimState:
    """Initial estimate with squared overlap ``Q0^2 = q0``.

    ``x0 = sqrt(q0) xi + sqrt(1 - q0) w`` where ``w`` is a standard Gaussian
    projected orthogonally to ``xi`` and scaled to norm ``sqrt(n)``; hence
    ``||x0||^2 = n`` and ``Q0 = sqrt(q0)`` up to rounding.
    """
    if not 0.0 <= q0 <= 1.0:
        raise DomainError(f"q0={q0} outside [0, 1]")
    rng = np.random.default_rng(rng)
    v = xi.values
    n = v.size
    g = rng.standard_normal(n)
    g -= (v @ g / n) * v
    g *= np.sqrt(n) / np.linalg.norm(g)
    x = np.sqrt(q0) * v + np.sqrt(1.0 - q0) * g
    x *= np.sqrt(n) / np.linalg.norm(x)
    return make_state(x, xi, phi or Regularizer())


def advance(x, xi_v, algo: AlgoConfig, tau: float, c, g):
    """Apply the update to ``x`` given the source draw(s) ``c`` and raw Gaussian(s) ``g``.

    Batched over a leading axis when ``c`` is 1-D and ``g`` is 2-D; ``x`` may
    be a single state (shared) or one state per batch row.
    """
    n = xi_v.size
    sqn = np.sqrt(n)
    if g.ndim == 1:
        return _advance1(x, xi_v, algo, tau, float(c), g, n, sqn)
    c = np.asarray(c, dtype=float)
    pg = g @ xi_v / n
    coef = c / sqn - pg
    y = g + coef[..., None] * xi_v
    u = np.sum(y * x, axis=-1) / sqn
    xt = x + (algo.update_sign * tau / sqn * algo.f(u))[..., None] * y
    if not algo.phi.is_none:
        xt = xt - (tau / n) * algo.phi.phi(x)
    with np.errstate(over="ignore", invalid="ignore"):
        nrm = np.linalg.norm(xt, axis=-1)
    if np.any(nrm == 0) or not np.all(np.isfinite(nrm)):
        raise DegenerateStateError("||x_tilde|| is zero or non-finite; step size too large?")
    return xt * (sqn / nrm)[..., None]


def _advance1(x, xi_v, algo, tau, c, g, n, sqn):
    y = g + (c / sqn - (g @ xi_v) / n) * xi_v
    u = (y @ x) / sqn
    xt = x + (algo.update_sign * tau / sqn * float(algo.f(u))) * y
    if not algo.phi.is_none:
        xt -= (tau / n) * algo.phi.phi(x)
    with np.errstate(over="ignore", invalid="ignore"):
        nrm = np.sqrt(xt @ xt)
    if nrm == 0 or not np.isfinite(nrm):
        raise DegenerateStateError("||x_tilde|| is zero or non-finite; step size too large?")
    xt *= sqn / nrm
    return xt


def step(state: SimState, algo: AlgoConfig, src: SourceDist, rng) -> SimState:
    """One online ICA iteration."""
    rng = np.random.default_rng(rng)
    n = state.n
    tau = algo.schedule.tau(state.k / n)
    c = src.sample(rng)
    g = rng.standard_normal(n)
    x = advance(state.x, state.xi.values, algo, tau, c, g)
    return make_state(x, state.xi, algo.phi, state.k + 1)


def _stride(record_dt: float, n: int) -> int:
    return max(1, int(round(record_dt * n)))


def run_trial(
    xi: FeatureVector,
    source: SourceDist,
    algo: AlgoConfig,
    q0: float,
    T: float,
    record_dt: float = 0.1,
    snapshot_times=(),
    seed=None,
) -> Trajectory:
    """Run ``floor(T n)`` steps and record ``(Q, R)`` every ``record_dt``.

    Snapshots of ``x`` are taken at ``k = floor(t n)`` for each requested ``t``.
    Deterministic given ``seed``.
    """
    n = xi.n
    ss = np.random.SeedSequence(seed)
    init_rng, step_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    state = init_state(xi, q0, init_rng, algo.phi)
    x = state.x
    v = xi.values
    k_end = int(np.floor(T * n + 1e-9))
    stride = _stride(record_dt, n)
    snap_k = {int(np.floor(t * n + 1e-9)): float(t) for t in snapshot_times}
    if any(k > k_end or k < 0 for k in snap_k):
        raise DomainError("snapshot time outside [0, T]")

    ks, Qs, Rs = [], [], []
    snapshots = {}

    def record(k, x):
        if k % stride == 0 or k == k_end:
            Q, R = _order_params(x, v, algo.phi)
            ks.append(k)
            Qs.append(Q)
            Rs.append(R)
        if k in snap_k:
            snapshots[snap_k[k]] = x.copy()

    record(0, x)
    chunk = max(1, min(1024, _CHUNK_BYTES // (8 * n)))
    k = 0
    while k < k_end:
        m = min(chunk, k_end - k)
        cs = source.sample(step_rng, size=m)
        gs = step_rng.standard_normal((m, n))
        for j in range(m):
            tau = algo.schedule.tau(k / n)
            x = advance(x, v, algo, tau, cs[j], gs[j])
            k += 1
            record(k, x)
    times = np.array(ks, dtype=float) / n
    return Trajectory(times, Qs, Rs, xi, snapshots, None if seed is None else int(seed))


def run_trials(xi, source, algo, q0, T, trials: int, record_dt=0.1, snapshot_times=(), seed=None,
               threads: int = 1) -> list[Trajectory]:
    """Independent trials with seeds spawned from one root seed."""
    root = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in root.spawn(trials)]
    args = [(xi, source, algo, q0, T, record_dt, tuple(snapshot_times), s) for s in seeds]
    if threads <= 1 or trials == 1:
        return [run_trial(*a) for a in args]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_trial_star, args))


def _run_trial_star(a):
    return run_trial(*a)


def _path_lookup(path, name: str):
    times = np.asarray(path.times, dtype=float)
    vals = getattr(path, name, None)
    vals = np.zeros_like(times) if vals is None else np.asarray(vals, dtype=float)

    def at(t):
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise DomainError(f"t={t} outside path range [{times[0]}, {times[-1]}]")
        return float(np.interp(t, times, vals))

    return at


def run_decoupled(
    ctx: CoeffContext,
    xi: FeatureVector,
    path,
    q0: float,
    T: float,
    dt: float | None = None,
    schedule: StepSchedule | None = None,
    record_dt: float = 0.1,
    snapshot_times=(),
    seed=None,
) -> Trajectory:
    """Evolve ``n`` independent particles under the limit drift and diffusion.

    ``path`` supplies ``times``, ``Q`` and optionally ``R`` (e.g. a PDE or
    ODE solution); the particles do not feed back into it.  ``dt`` defaults
    to ``1/n``, the discrete process itself; larger ``dt`` gives an
    Euler-Maruyama discretization of the SDE limit.
    """
    n = xi.n
    dt = 1.0 / n if dt is None else float(dt)
    if dt <= 0:
        raise ConfigError("dt must be positive")
    Q_at = _path_lookup(path, "Q")
    R_at = _path_lookup(path, "R")
    ss = np.random.SeedSequence(seed)
    init_rng, step_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    z = init_state(xi, q0, init_rng, ctx.phi).x.copy()
    v = xi.values
    n_steps = int(np.floor(T / dt + 1e-9))
    stride = _stride(record_dt, 1.0 / dt)
    snap_k = {int(np.floor(t / dt + 1e-9)): float(t) for t in snapshot_times}

    ks, Qs, Rs, snapshots = [], [], [], {}

    def record(k):
        if k % stride == 0 or k == n_steps:
            Q, R = _order_params(z, v, ctx.phi)
            ks.append(k)
            Qs.append(Q)
            Rs.append(R)
        if k in snap_k:
            snapshots[snap_k[k]] = z.copy()

    record(0)
    for k in range(n_steps):
        t = k * dt
        c = ctx if schedule is None else ctx.with_tau(schedule.tau(t))
        Q, R = Q_at(t), R_at(t)
        G = g_coeff(c, Q)
        Lam = lambda_coeff(c, Q)
        drift = _gamma(c, z, v, Q, R, G, Lam)
        z = z + dt * drift + np.sqrt(Lam * dt) * step_rng.standard_normal(n)
        record(k + 1)
    return Trajectory(np.array(ks, dtype=float) * dt, Qs, Rs, xi, snapshots,
                      None if seed is None else int(seed))


def _full_step_batch(state: SimState, algo: AlgoConfig, src: SourceDist, n_samples: int, rng,
                     reducer):
    """Resample ``(c, a)`` ``n_samples`` times from a frozen state; feed batches to ``reducer``."""
    n = state.n
    tau = algo.schedule.tau(state.t)
    batch = max(1, min(n_samples, _CHUNK_BYTES // (8 * n)))
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        c = src.sample(rng, size=m)
        g = rng.standard_normal((m, n))
        xn = advance(state.x, state.xi.values, algo, tau, c, g)
        reducer(xn - state.x)
        done += m


def moment_oracle(state: SimState, algo: AlgoConfig, src: SourceDist, n_samples: int = 10_000,
                  coord_subset=None, rng=None):
    """Monte-Carlo conditional mean and variance of the one-step increment.

    The state ``(x, xi)`` is held fixed while ``(c, a)`` are redrawn.  Returns
    ``(mean_incr, var_incr)`` over ``coord_subset`` (all coordinates by
    default); the standard error of the mean is ``sqrt(var_incr / n_samples)``.
    """
    rng = np.random.default_rng(rng)
    idx = np.arange(state.n) if coord_subset is None else np.asarray(coord_subset)
    s1 = np.zeros(idx.size)
    s2 = np.zeros(idx.size)

    def reduce(d):
        d = d[:, idx]
        s1[:] += d.sum(axis=0)
        s2[:] += (d * d).sum(axis=0)

    _full_step_batch(state, algo, src, n_samples, rng, reduce)
    mean = s1 / n_samples
    var = np.maximum(s2 / n_samples - mean**2, 0.0) * n_samples / max(n_samples - 1, 1)
    return mean, var


def calibrate_g_sign(algo: AlgoConfig, src: SourceDist, xi: FeatureVector, q_probe: float = 0.5,
                     n_samples: int = 10_000, seed=None):
    """Pick the sign of ``G`` that reproduces the finite-n drift of ``Q``.

    At a probe state with ``Q = q_probe`` the mean of ``n * dQ`` over fresh
    ``(c, a)`` draws is compared with ``mean_i xi_i Gamma(x_i, xi_i)`` computed
    under each candidate sign.  Returns ``(g_sign, evidence)``.
    """
    ss = np.random.SeedSequence(seed)
    init_rng, mc_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    state = init_state(xi, q_probe**2, init_rng, algo.phi)
    n = state.n
    v = xi.values
    vals = []
    _full_step_batch(state, algo, src, n_samples, mc_rng, lambda d: vals.append(d @ v))
    ndq = np.concatenate(vals)
    mc_mean = float(ndq.mean())
    se = float(ndq.std(ddof=1) / np.sqrt(ndq.size))
    pred = {}
    for s in (1, -1):
        ctx = algo.context(src, g_sign=s, t=state.t)
        gam = _gamma(ctx, state.x, v, state.Qn, state.Rn, g_coeff(ctx, state.Qn), lambda_coeff(ctx, state.Qn))
        pred[s] = float(v @ gam) / n
    z = {s: (mc_mean - pred[s]) / se for s in pred}
    chosen = min(z, key=lambda s: abs(z[s]))
    evidence = {
        "q_probe": q_probe,
        "n": n,
        "n_samples": n_samples,
        "mc_mean_n_dQ": mc_mean,
        "mc_se": se,
        "pred_plus": pred[1],
        "pred_minus": pred[-1],
        "z_plus": z[1],
        "z_minus": z[-1],
        "g_sign": chosen,
        "ambiguous": bool(abs(pred[1] - pred[-1]) < 4 * se),
    }
    return chosen, evidence


def with_update_sign(algo: AlgoConfig, sign: int) -> AlgoConfig:
    return replace(algo, update_sign=sign)
