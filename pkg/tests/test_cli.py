import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from onlineica.cli import main
from onlineica.config import RunConfig
from onlineica.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small_cube(**over):
    cfg = yaml.safe_load((CONFIGS / "cube_rademacher.yaml").read_text())
    cfg["model"].update(n=400, q0=[0.48, 0.68])
    cfg["algorithm"]["T"] = 0.5
    cfg["numerics"].update(trials=3, calibration={"n": 500, "samples": 4000})
    for k, v in over.items():
        cfg[k].update(v) if isinstance(v, dict) else cfg.__setitem__(k, v)
    return cfg


def small_sparse(**over):
    cfg = yaml.safe_load((CONFIGS / "sparse_l1.yaml").read_text())
    cfg["model"]["n"] = 1000
    cfg["algorithm"]["T"] = 0.5
    cfg["numerics"].update(snapshot_times=[0.25, 0.5], particles=2000, decoupled_dt=0.01, g_sign=-1)
    cfg["numerics"]["grid"]["n_cells"] = 256
    cfg["roc"]["times"] = [0.25, 0.5]
    for k, v in over.items():
        cfg[k].update(v) if isinstance(v, dict) else cfg.__setitem__(k, v)
    return cfg


def run(tmp_path, command, cfg, name="out", extra=()):
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out = tmp_path / name
    return main([command, "--config", str(path), "--out", str(out), *extra]), out


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=object)


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_shipped_configs_parse():
    for p in sorted(CONFIGS.glob("*.yaml")):
        RunConfig.load(p)


def test_compare_ode_writes_band_table(tmp_path):
    code, out = run(tmp_path, "compare", small_cube())
    assert code == 0
    header, rows = read_csv(out / "compare_ode_0.csv")
    assert header == ["t", "q_sim_mean", "q_sim_std", "q_ode"]
    m = manifest(out)
    assert m["g_sign"]["value"] == -1 and m["g_sign"]["source"] == "monte_carlo"
    assert set(m["outputs"]) == {"compare_ode_0.csv", "compare_ode_1.csv"}


def test_compare_T0_passes(tmp_path):
    code, out = run(tmp_path, "compare", small_cube(algorithm={"T": 0.0}))
    assert code == 0
    _, rows = read_csv(out / "compare_ode_0.csv")
    assert rows.shape[0] == 1


def test_config_error_writes_nothing(tmp_path):
    code, out = run(tmp_path, "compare", small_cube(model={"q0": 1.5}))
    assert code == 3 and not out.exists()
    bad = tmp_path / "broken.yaml"
    bad.write_text("experiment: [unclosed")
    assert main(["ode", "--config", str(bad), "--out", str(tmp_path / "b")]) == 3


def test_config_validation_messages():
    cfg = small_sparse()
    cfg["experiment"] = "roc"
    cfg["model"]["feature"] = {"kind": "prior", "prior": 1.0}
    with pytest.raises(ConfigError, match="zero and nonzero"):
        RunConfig.from_dict(cfg)
    cfg = small_sparse(experiment="ode")
    with pytest.raises(ConfigError, match="phi = none"):
        RunConfig.from_dict(cfg)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"experiment": "simulate", "algorithm": {}})


def test_determinism(tmp_path):
    cfg = small_cube()
    _, a = run(tmp_path, "simulate", cfg, "a")
    _, b = run(tmp_path, "simulate", cfg, "b")
    assert manifest(a)["outputs"] == manifest(b)["outputs"]
    _, c = run(tmp_path, "simulate", cfg, "c", ("--seed", "99"))
    assert manifest(c)["outputs"] != manifest(a)["outputs"]
    assert manifest(c)["seed"] == 99


def test_ode_q0_zero_flat(tmp_path):
    code, out = run(tmp_path, "ode", small_cube(model={"q0": 0.0}, numerics={"g_sign": -1}))
    assert code == 0
    header, rows = read_csv(out / "ode.csv")
    assert header == ["t", "q", "Q"]
    assert np.all(rows[:, 1].astype(float) == 0)


def test_bifurcation_outputs(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "bifurcation.yaml").read_text())
    code, out = run(tmp_path, "bifurcation", cfg)
    assert code == 0
    _, g = read_csv(out / "g_curves.csv")
    taus = g[:, 0].astype(float)
    curves = np.array([g[taus == t, 2].astype(float) for t in np.unique(taus)])
    assert curves.shape[0] == 4 and np.all(np.diff(curves, axis=0) < 0)
    _, fp = read_csv(out / "fixed_points.csv")
    assert fp.shape == (4, 4)
    assert "seed" in manifest(out)


def test_bifurcation_gaussian_source(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "bifurcation.yaml").read_text())
    cfg["model"]["source"] = "three_atom"
    code, out = run(tmp_path, "bifurcation", cfg)
    assert code == 0
    _, fp = read_csv(out / "fixed_points.csv")
    assert np.all(fp[:, 2:] == "")
    _, g = read_csv(out / "g_curves.csv")
    assert np.all(g[:, 2].astype(float) < 0)


def test_pde_and_decoupled(tmp_path):
    code, out = run(tmp_path, "pde", small_sparse())
    assert code == 0
    header, rows = read_csv(out / "snapshots.csv")
    assert header == ["t", "xi_atom", "x", "density"]
    assert sorted(set(rows[:, 0].astype(float))) == [0.25, 0.5]
    assert read_csv(out / "q_path.csv")[0] == ["t", "Q", "R"]
    code, out = run(tmp_path, "decoupled", small_sparse(), "dec")
    assert code == 0
    assert read_csv(out / "histograms.csv")[0] == ["t", "xi_atom", "x", "density"]


def test_compare_pde_and_roc(tmp_path):
    code, out = run(tmp_path, "compare", small_sparse())
    assert code == 0
    assert read_csv(out / "compare_pde.csv")[0] == ["t", "xi_atom", "x", "density_sim", "density_pde"]
    code, out = run(tmp_path, "roc", small_sparse(), "roc")
    assert code == 0
    header, rows = read_csv(out / "roc.csv")
    assert header == ["t", "threshold", "tpr", "fpr", "source"]
    assert set(rows[:, 4]) == {"sim", "pde"}
    for src in ("sim", "pde"):
        for t in (0.25, 0.5):
            sel = (rows[:, 4] == src) & (rows[:, 0].astype(float) == t)
            assert np.all(np.diff(rows[sel, 2].astype(float)) <= 0)
            assert np.all(np.diff(rows[sel, 3].astype(float)) <= 0)


def test_tolerance_failure_exit_code(tmp_path):
    code, out = run(tmp_path, "compare", small_sparse(compare={"ks_tolerance": 0.0}))
    assert code == 2
    assert manifest(out)["status"].startswith("tolerance failure")


def test_numeric_failure_exit_code(tmp_path):
    code, out = run(tmp_path, "simulate", small_cube(algorithm={"tau": 1e200}, numerics={"g_sign": -1}))
    assert code == 4
    assert manifest(out)["exit_code"] == 4
