"""Command-line driver.

    onlineica {simulate,ode,pde,decoupled,compare,roc,bifurcation} --config PATH
              [--out DIR] [--seed INT] [--threads INT]

Exit codes: 0 pass, 2 tolerance failure, 3 config error, 4 numeric failure.
Every run writes CSV files plus ``manifest.json`` into the output directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from onlineica import __version__, metrics, ode, pde
from onlineica.config import RunConfig
from onlineica.errors import ConfigError, NumericError
from onlineica.simulate import calibrate_g_sign, run_decoupled, run_trial, run_trials

log = logging.getLogger("onlineica")

EXIT_OK, EXIT_TOLERANCE, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4


class Run:
    """Collects output tables and manifest entries; writes them at the end."""

    def __init__(self, cfg: RunConfig, threads: int = 1):
        self.cfg = cfg
        self.threads = threads
        self.tables: dict[str, tuple[list, list]] = {}
        self.info: dict = {}
        self.failures: list[str] = []
        self._ctx = None

    def table(self, name: str, header: list, rows) -> None:
        self.tables[name] = (header, rows)

    def context(self, t: float = 0.0):
        """Coefficient context with ``g_sign`` fixed once, by calibration unless pinned."""
        cfg = self.cfg
        if self._ctx is None:
            if cfg.g_sign == "auto":
                cal = cfg.calibration
                xi = cfg.make_particle_feature(int(cal.get("n", 2000)))
                sign, evidence = calibrate_g_sign(cfg.algo, cfg.source, xi, float(cal.get("q_probe", 0.5)),
                                                  int(cal.get("samples", 10_000)), seed=cfg.seed)
                self.info["g_sign"] = {"value": sign, "source": "monte_carlo", "evidence": evidence}
            else:
                sign = int(cfg.g_sign)
                self.info["g_sign"] = {"value": sign, "source": "config"}
            self._ctx = cfg.algo.context(cfg.source, g_sign=sign, n_nodes=cfg.nodes)
        return self._ctx if t == 0.0 else self._ctx.with_tau(cfg.algo.schedule.tau(t))

    def schedule(self):
        s = self.cfg.algo.schedule
        return None if s.is_constant else s


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- experiments ---------------------------------------------------------------------------


def _histogram_rows(t, xi_fv, x, grid, prior):
    rows = []
    for j, v in enumerate(prior.values):
        mask = xi_fv.atom_mask(j)
        if not mask.any():
            continue
        hist = metrics.histogram_on_grid(x[mask], grid)
        rows += [(t, v, xc, dv) for xc, dv in zip(grid.centers, hist.density)]
    return rows


def cmd_simulate(run: Run) -> None:
    cfg = run.cfg
    rows, hist_rows = [], []
    grid = cfg.grid() if cfg.snapshot_times and all(q < 1 for q in cfg.q0s) else None
    for i, q0 in enumerate(cfg.q0s):
        xi = cfg.make_feature(seed=cfg.seed + i)
        trajs = run_trials(xi, cfg.source, cfg.algo, q0, cfg.T, cfg.trials, cfg.record_dt,
                           cfg.snapshot_times, seed=cfg.seed + i, threads=run.threads)
        for k, tr in enumerate(trajs):
            rows += [(q0, k, t, Q, Q * Q, R) for t, Q, R in zip(tr.times, tr.Q, tr.R)]
            if grid is not None and xi.labels is not None:
                for t, x in sorted(tr.snapshots.items()):
                    hist_rows += [(q0, k, *r) for r in _histogram_rows(t, xi, x, grid, cfg.prior)]
    run.table("trajectories.csv", ["q0", "trial", "t", "Q", "q", "R"], rows)
    if hist_rows:
        run.table("histograms.csv", ["q0", "trial", "t", "xi_atom", "x", "density"], hist_rows)


def _ode_solution(run: Run, q0: float) -> ode.OdeSolution:
    cfg = run.cfg
    rhs = ode.general_rhs_q(run.context(), run.schedule())
    every = max(1, int(round(cfg.record_dt / cfg.ode_dt)))
    return ode.integrate(rhs, q0, cfg.T, cfg.ode_dt, record_every=every)


def cmd_ode(run: Run) -> None:
    sols = [_ode_solution(run, q0) for q0 in run.cfg.q0s]
    for i, sol in enumerate(sols):
        name = "ode.csv" if len(sols) == 1 else f"ode_{i}.csv"
        run.table(name, ["t", "q", "Q"], list(zip(sol.times, sol.q, sol.Q)))
        if sol.out_of_range:
            run.info.setdefault("warnings", []).append(f"{name}: q left [0, 1] by more than 1e-9")


def _pde_solution(run: Run, q0: float, snapshot_times=()) -> pde.PdeSolution:
    cfg = run.cfg
    return pde.solve(run.context(), cfg.prior, q0, cfg.T, cfg.grid(), run.schedule(), snapshot_times,
                     cfg.dt_max, record_dt=cfg.record_dt)


def _density_rows(d: pde.GridDensity):
    return [(d.t, v, xc, dv) for j, v in enumerate(d.xi) for xc, dv in zip(d.grid.centers, d.density[j])]


def cmd_pde(run: Run) -> None:
    cfg = run.cfg
    sol = _pde_solution(run, cfg.q0, cfg.snapshot_times)
    run.table("q_path.csv", ["t", "Q", "R"], list(zip(sol.times, sol.Q, sol.R)))
    rows = [r for s in sol.snapshots for r in _density_rows(s)]
    run.table("snapshots.csv", ["t", "xi_atom", "x", "density"], rows)
    run.info["pde"] = {"final_mass": sol.final.mass().tolist(), "max_clipped": sol.clipped,
                       "final_second_moment": sol.final.second_moment()}


def cmd_decoupled(run: Run) -> None:
    cfg = run.cfg
    sol = _pde_solution(run, cfg.q0)
    xi = cfg.make_particle_feature(cfg.particles)
    tr = run_decoupled(run.context(), xi, sol, cfg.q0, cfg.T, cfg.decoupled_dt, run.schedule(), cfg.record_dt,
                       cfg.snapshot_times, seed=cfg.seed)
    run.table("trajectory.csv", ["t", "Q", "R"], list(zip(tr.times, tr.Q, tr.R)))
    grid = cfg.grid()
    rows = [r for t, x in sorted(tr.snapshots.items()) for r in _histogram_rows(t, xi, x, grid, cfg.prior)]
    run.table("histograms.csv", ["t", "xi_atom", "x", "density"], rows)


def cmd_compare(run: Run) -> None:
    cfg = run.cfg
    if cfg.compare.get("against", "ode") == "ode":
        _compare_ode(run)
    else:
        _compare_pde(run)


def _compare_ode(run: Run) -> None:
    cfg = run.cfg
    floor = float(cfg.compare.get("tolerance", 0.05))
    n_std = float(cfg.compare.get("n_std", 2.0))
    for i, q0 in enumerate(cfg.q0s):
        xi = cfg.make_feature(seed=cfg.seed + i)
        trajs = run_trials(xi, cfg.source, cfg.algo, q0, cfg.T, cfg.trials, cfg.record_dt,
                           seed=cfg.seed + i, threads=run.threads)
        times = trajs[0].times
        q_sim = np.array([tr.Q**2 for tr in trajs])
        mean, std = q_sim.mean(axis=0), q_sim.std(axis=0, ddof=1) if len(trajs) > 1 else np.zeros_like(times)
        sol = _ode_solution(run, q0)
        q_ode = np.interp(times, sol.times, sol.q)
        band = np.maximum(floor, n_std * std)
        bad = np.nonzero(np.abs(mean - q_ode) > band)[0]
        name = "compare_ode.csv" if len(cfg.q0s) == 1 else f"compare_ode_{i}.csv"
        run.table(name, ["t", "q_sim_mean", "q_sim_std", "q_ode"], list(zip(times, mean, std, q_ode)))
        if bad.size:
            k = bad[0]
            run.failures.append(f"q0={q0}: |q_sim - q_ode| = {abs(mean[k] - q_ode[k]):.4f} > band {band[k]:.4f} "
                                f"at t={times[k]:.3f}")


def _compare_pde(run: Run) -> None:
    cfg = run.cfg
    tol = float(cfg.compare.get("ks_tolerance", 0.05))
    times = cfg.snapshot_times or [cfg.T]
    xi = cfg.make_feature(seed=cfg.seed)
    tr = run_trial(xi, cfg.source, cfg.algo, cfg.q0, cfg.T, cfg.record_dt, times, seed=cfg.seed)
    sol = _pde_solution(run, cfg.q0, times)
    rows, ks = [], []
    for t in times:
        d = sol.snapshot(t)
        x = tr.snapshots[t]
        for j, v in enumerate(d.xi):
            mask = xi.atom_mask(j)
            if not mask.any():
                continue
            hs = metrics.histogram_on_grid(x[mask], d.grid)
            hp = metrics.atom_histogram(d, v)
            dist = metrics.density_distance(hs, hp)
            ks.append({"t": t, "xi_atom": float(v), "ks": dist.ks, "w1": dist.w1})
            rows += [(t, v, xc, a, b) for xc, a, b in zip(d.grid.centers, hs.density, hp.density)]
            if dist.ks > tol:
                run.failures.append(f"t={t}, xi={v:.4f}: KS {dist.ks:.4f} > {tol}")
    run.table("compare_pde.csv", ["t", "xi_atom", "x", "density_sim", "density_pde"], rows)
    run.info["density_distances"] = ks


def cmd_roc(run: Run) -> None:
    cfg = run.cfg
    times = [float(t) for t in cfg.roc.get("times", [cfg.T])]
    xi = cfg.make_feature(seed=cfg.seed)
    tr = run_trial(xi, cfg.source, cfg.algo, cfg.q0, cfg.T, cfg.record_dt, times, seed=cfg.seed)
    sol = _pde_solution(run, cfg.q0, times)
    th = metrics.default_thresholds(sol.final.grid.x_max, int(cfg.roc.get("n_thresholds", 200)))
    rows, gaps = [], []
    for t in times:
        rs = metrics.roc_from_samples(tr.snapshots[t], xi.values != 0, th)
        rp = metrics.roc_from_pde(sol.snapshot(t), th)
        rows += [(t, a, b, c, "sim") for a, b, c in zip(th, rs.tpr, rs.fpr)]
        rows += [(t, a, b, c, "pde") for a, b, c in zip(th, rp.tpr, rp.fpr)]
        gaps.append({"t": t, "max_tpr_gap": float(np.max(np.abs(rs.tpr - rp.tpr))),
                     "max_fpr_gap": float(np.max(np.abs(rs.fpr - rp.fpr))),
                     "auc_sim": rs.auc(), "auc_pde": rp.auc()})
    run.table("roc.csv", ["t", "threshold", "tpr", "fpr", "source"], rows)
    run.info["roc"] = gaps


def cmd_bifurcation(run: Run) -> None:
    cfg = run.cfg
    m4, m6 = cfg.source.m4, cfg.source.m6
    taus = [float(t) for t in cfg.bifurcation.get("taus", [0.02, 0.04, 0.06, 0.08])]
    n_q = int(cfg.bifurcation.get("q_points", 199))
    q = np.linspace(0.0, 1.0, n_q + 2)[1:-1]
    run.table("g_curves.csv", ["tau", "q", "g"],
              [(tau, qq, g) for tau in taus for qq, g in zip(q, ode.g_curve(tau, q, m4, m6))])
    res = ode.bifurcation(taus, m4, m6)
    run.table("fixed_points.csv", ["tau", "tau_c", "q_unstable", "q_stable"],
              [(tau, res.tau_c, qu, qs) for tau, qu, qs in res.branches])
    run.info["tau_c"] = res.tau_c
    run.info["g_sign"] = {"value": None, "source": "not used (closed-form cube ODE)"}


COMMANDS = {
    "simulate": cmd_simulate,
    "ode": cmd_ode,
    "pde": cmd_pde,
    "decoupled": cmd_decoupled,
    "compare": cmd_compare,
    "roc": cmd_roc,
    "bifurcation": cmd_bifurcation,
}


def execute(command: str, cfg: RunConfig, out: Path, threads: int = 1) -> int:
    """Run ``command`` and write its outputs; returns the exit code."""
    if cfg.experiment != command:
        log.info("config experiment %r overridden by command %r", cfg.experiment, command)
    run = Run(cfg, threads)
    t0 = time.perf_counter()
    status, code = "pass", EXIT_OK
    try:
        COMMANDS[command](run)
    except NumericError as e:
        status, code = f"numeric failure: {e}", EXIT_NUMERIC
    if code == EXIT_OK and run.failures:
        status, code = f"tolerance failure: {run.failures[0]}", EXIT_TOLERANCE
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, (header, rows) in run.tables.items():
        _write_csv(out / name, header, rows)
        files[name] = _sha256(out / name)
    manifest = {
        "command": command,
        "config": cfg.raw,
        "seed": cfg.seed,
        "threads": threads,
        "status": status,
        "exit_code": code,
        "failures": run.failures,
        "versions": {"onlineica": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "wall_clock_s": time.perf_counter() - t0,
        "outputs": files,
        **run.info,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return code


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onlineica", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", help="output directory (default: config 'output')")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker processes for independent trials")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, output=args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    code = execute(args.command, cfg, Path(cfg.output), max(1, args.threads))
    if code != EXIT_OK:
        print(json.loads((Path(cfg.output) / "manifest.json").read_text())["status"], file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
