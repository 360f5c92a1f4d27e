"""Run configuration: YAML schema, validation, and object construction.

Every check runs in ``RunConfig.from_dict`` so that a bad file fails before
any computation starts.  The schema is documented in README.md.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from onlineica.coeffs import Nonlinearity, Regularizer
from onlineica.errors import ConfigError, OnlineICAError
from onlineica.model import (
    FeatureVector,
    PriorMeasure,
    SourceDist,
    StepSchedule,
    feature_from_prior,
    make_sparse_feature,
    rademacher,
    sparse_ternary,
    three_atom,
)
from onlineica.pde import Grid1D, auto_grid
from onlineica.simulate import AlgoConfig

EXPERIMENTS = ("simulate", "ode", "pde", "decoupled", "compare", "roc", "bifurcation")

_NAMED_SOURCES = {"rademacher": rademacher, "three_atom": three_atom}


def _source(spec) -> SourceDist:
    if isinstance(spec, str):
        if spec not in _NAMED_SOURCES:
            raise ConfigError(f"unknown source {spec!r}; named sources are {sorted(_NAMED_SOURCES)}")
        return _NAMED_SOURCES[spec]()
    if isinstance(spec, dict):
        if spec.get("kind") == "ternary":
            return sparse_ternary(float(spec.get("p", 1 / 3)))
        if "values" in spec and "weights" in spec:
            return SourceDist.from_atoms(spec["values"], spec["weights"], spec.get("name", "custom"),
                                         standardize=bool(spec.get("standardize", False)))
    raise ConfigError(f"cannot parse source {spec!r}")


def _prior(spec) -> PriorMeasure:
    if isinstance(spec, dict) and "rho" in spec:
        return PriorMeasure.sparse(float(spec["rho"]))
    if isinstance(spec, dict) and "values" in spec:
        return PriorMeasure(np.asarray(spec["values"], float), np.asarray(spec["weights"], float))
    if isinstance(spec, (int, float)):
        return PriorMeasure.point(float(spec))
    raise ConfigError(f"cannot parse prior {spec!r}")


def _schedule(alg: dict) -> StepSchedule:
    if "schedule" in alg:
        s = alg["schedule"]
        if s.get("kind", "constant") == "table":
            return StepSchedule("table", float(s.get("tau0", s["table"][0][1])),
                                tuple((float(a), float(b)) for a, b in s["table"]))
        return StepSchedule.constant(float(s["tau0"]))
    if "tau" not in alg:
        raise ConfigError("algorithm needs 'tau' or 'schedule'")
    return StepSchedule.constant(float(alg["tau"]))


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class RunConfig:
    raw: dict
    experiment: str
    seed: int
    n: int
    feature: dict
    prior: PriorMeasure
    source: SourceDist
    q0s: list
    algo: AlgoConfig
    T: float
    trials: int = 1
    record_dt: float = 0.1
    ode_dt: float = 1e-3
    n_cells: int = 1024
    half_width: float = 8.0
    dt_max: float = 1e-2
    nodes: int = 40
    particles: int = 100_000
    decoupled_dt: float | None = None
    snapshot_times: list = field(default_factory=list)
    g_sign: Any = "auto"
    calibration: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)
    roc: dict = field(default_factory=dict)
    bifurcation: dict = field(default_factory=dict)
    output: str = "out"

    @property
    def q0(self) -> float:
        return self.q0s[0]

    @classmethod
    def load(cls, path: str | Path, **overrides) -> RunConfig:
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(raw, **overrides)

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None, output: str | None = None) -> RunConfig:
        try:
            return cls._from_dict(raw, seed, output)
        except OnlineICAError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise ConfigError(f"malformed config: {e!r}") from e

    @classmethod
    def _from_dict(cls, raw, seed, output) -> RunConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = copy.deepcopy(raw)
        exp = raw.get("experiment")
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
        model = raw.get("model", {})
        alg = raw.get("algorithm", {})
        num = raw.get("numerics", {})

        feature = dict(model.get("feature", {"kind": "prior", "prior": 1.0, "mode": "deterministic"}))
        if feature.get("kind", "prior") == "sparse":
            prior = PriorMeasure.sparse(float(feature["rho"]))
        else:
            prior = _prior(feature.get("prior", 1.0))
            if feature.get("mode", "deterministic") not in ("iid", "deterministic"):
                raise ConfigError("feature mode must be 'iid' or 'deterministic'")
        source = _source(model.get("source", "rademacher"))
        q0s = [float(q) for q in _as_list(model.get("q0", 0.5))]
        for q in q0s:
            if not 0.0 <= q <= 1.0:
                raise ConfigError(f"q0={q} outside [0, 1] (|Q0| must not exceed 1)")
        n = int(model.get("n", 1000))
        if n < 2:
            raise ConfigError("n must be at least 2")

        if exp == "bifurcation" and "tau" not in alg and "schedule" not in alg:
            schedule = StepSchedule.constant(0.1)  # unused: the sweep reads bifurcation.taus
        else:
            schedule = _schedule(alg)
        phi = alg.get("phi", "none")
        algo = AlgoConfig(
            f=Nonlinearity(alg.get("f", "cube")),
            phi=Regularizer(**phi) if isinstance(phi, dict) else Regularizer(phi),
            schedule=schedule,
            update_sign=int(alg.get("update_sign", 1)),
        )
        T = float(alg.get("T", 10.0))
        if T < 0:
            raise ConfigError("T must be nonnegative")

        g_sign = num.get("g_sign", "auto")
        if g_sign not in ("auto", 1, -1):
            raise ConfigError("numerics.g_sign must be 'auto', 1 or -1")
        snaps = [float(t) for t in _as_list(num.get("snapshot_times", []))]
        if any(t < 0 or t > T for t in snaps):
            raise ConfigError("snapshot_times must lie in [0, T]")
        roc = dict(raw.get("roc", {}))
        if any(t < 0 or t > T for t in _as_list(roc.get("times", []))):
            raise ConfigError("roc.times must lie in [0, T]")

        cfg = cls(
            raw=raw,
            experiment=exp,
            seed=int(seed if seed is not None else raw.get("seed", 0)),
            n=n,
            feature=feature,
            prior=prior,
            source=source,
            q0s=q0s,
            algo=algo,
            T=T,
            trials=int(num.get("trials", 1)),
            record_dt=float(num.get("record_dt", 0.1)),
            ode_dt=float(num.get("ode_dt", 1e-3)),
            n_cells=int(num.get("grid", {}).get("n_cells", 1024)),
            half_width=float(num.get("grid", {}).get("half_width", 8.0)),
            dt_max=float(num.get("dt_max", 1e-2)),
            nodes=int(num.get("nodes", 40)),
            particles=int(num.get("particles", 100_000)),
            decoupled_dt=None if num.get("decoupled_dt") is None else float(num["decoupled_dt"]),
            snapshot_times=snaps,
            g_sign=g_sign,
            calibration=dict(num.get("calibration", {})),
            compare=dict(raw.get("compare", {})),
            roc=roc,
            bifurcation=dict(raw.get("bifurcation", {})),
            output=str(output if output is not None else raw.get("output", "out")),
        )
        cfg._validate()
        return cfg

    def _validate(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.record_dt <= 0 or self.ode_dt <= 0 or self.dt_max <= 0:
            raise ConfigError("time steps must be positive")
        if self.experiment in ("pde", "decoupled", "roc") or (
            self.experiment == "compare" and self.compare.get("against", "ode") == "pde"
        ):
            if any(q >= 1.0 for q in self.q0s):
                raise ConfigError("the PDE needs q0 < 1")
            self.grid()
        if self.experiment == "ode" or (self.experiment == "compare" and self.compare.get("against", "ode") == "ode"):
            if not self.algo.phi.is_none:
                raise ConfigError("the order-parameter ODE needs phi = none")
        if self.experiment == "roc" and not (np.any(self.prior.values == 0) and np.any(self.prior.values != 0)):
            raise ConfigError("roc needs a prior with zero and nonzero atoms")
        if self.experiment == "bifurcation":
            if self.algo.f.base != "cube":
                raise ConfigError("bifurcation analysis uses the cube closed form; set f: cube")
            if any(float(t) <= 0 for t in self.bifurcation.get("taus", [0.02, 0.04, 0.06, 0.08])):
                raise ConfigError("bifurcation taus must be positive")
        if self.compare.get("against", "ode") not in ("ode", "pde"):
            raise ConfigError("compare.against must be 'ode' or 'pde'")

    def grid(self) -> Grid1D:
        return auto_grid(self.prior, min(self.q0s), self.n_cells, self.half_width)

    def make_feature(self, n: int | None = None, seed=None) -> FeatureVector:
        n = self.n if n is None else n
        if self.feature.get("kind", "prior") == "sparse":
            return make_sparse_feature(n, float(self.feature["rho"]), seed)
        return feature_from_prior(n, self.prior, self.feature.get("mode", "deterministic"), seed)

    def make_particle_feature(self, n: int) -> FeatureVector:
        # particles only need the atom proportions; interleaving avoids sampling noise in them
        return feature_from_prior(n, self.prior, "deterministic")
