import json

import pytest
import yaml

from lattice_extremes.cli import main
from lattice_extremes.config import ConfigError, config_hash, load_config
from lattice_extremes.plots import emit_plots

SMALL = {
    "seed": 11,
    "model": {"kind": "moving_maxima", "alpha": 1.0, "kernel": [1.0, 1.0]},
    "index_set": {"kind": "hyperrectangle", "n": [120]},
    "simulate": {"realizations": 120, "block": 32},
    "tailfield": {"quantiles": [0.99]},
    "timechange": {"budget": 2000},
    "laplace": {"realizations": 60, "budget": 2000},
    "theta": {"budget": 2000},
}


def write(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def test_config_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    p = tmp_path / "bad.yaml"
    p.write_text("seed: [1,\n")
    assert main(["run", "--config", str(p)]) == 2
    assert main(["run", "--config", write(tmp_path, dict(SMALL, bogus=1))]) == 2
    no_model = {k: v for k, v in SMALL.items() if k != "model"}
    assert main(["simulate", "--config", write(tmp_path, no_model)]) == 2
    assert main(["run", "--config", write(tmp_path, dict(SMALL, seed=-1))]) == 2
    bad_kernel = dict(SMALL, model={"kind": "moving_maxima", "kernel": [-1.0]})
    assert main(["run", "--config", write(tmp_path, bad_kernel)]) == 2
    assert "config error" in capsys.readouterr().err


def test_step_failure_names_step(tmp_path, capsys):
    cfg = dict(SMALL, index_set={"kind": "lattice_union", "basis": [[2]], "offsets": [[0]], "n": [60]})
    assert main(["theta", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3
    assert "step" in capsys.readouterr().err


def test_census_only(tmp_path):
    cfg = {"index_set": {"kind": "spacetime", "period": 1, "m": 12, "stations": [[0, 0], [0, 1], [1, 0]]},
           "census": {"ps": [1, 2]}}
    out = tmp_path / "o"
    assert main(["census", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "census.json").read_text())
    assert rep["n"] == 36 and set(rep["census"]) == {"1", "2"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["steps"] == ["census"] and man["outputs"] == {"census": ["census.json"]}


def test_file_index_set(tmp_path):
    (tmp_path / "pts.txt").write_text("k=2\n" + "\n".join(f"{i} {j}" for i in range(1, 9) for j in range(1, 4)) + "\n")
    cfg = {"index_set": {"kind": "file", "path": "pts.txt"}, "census": {"ps": [1, 2]}}
    assert main(["census", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "census.json").read_text())["n"] == 24


def test_run_deterministic_across_threads(tmp_path):
    cfgp = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfgp, "--out", str(a), "--threads", "1"]) == 0
    assert main(["run", "--config", cfgp, "--out", str(b), "--threads", "3"]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        if f.name != "manifest.json":
            assert (a / f).read_bytes() == (b / f).read_bytes(), f
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["config_hash"] == mb["config_hash"] and ma["outputs"] == mb["outputs"]
    assert {"ac_curve.svg", "frechet_qq.svg", "laplace_panel.svg"} <= {f.name for f in files}


def test_seed_override_changes_output(tmp_path):
    cfg = dict(SMALL, steps=["simulate"])
    cfgp = write(tmp_path, cfg)
    main(["simulate", "--config", cfgp, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", cfgp, "--out", str(tmp_path / "b"), "--seed", "12"])
    assert (tmp_path / "a" / "realization_0.csv").read_bytes() != (tmp_path / "b" / "realization_0.csv").read_bytes()


def test_hash_ignores_key_order_and_threads(tmp_path):
    p1 = write(tmp_path, SMALL, "a.yaml")
    reordered = dict(reversed(list(SMALL.items())))
    p2 = tmp_path / "b.yaml"
    p2.write_text(yaml.safe_dump(reordered, sort_keys=False))
    h1 = config_hash(load_config(p1))
    assert h1 == config_hash(load_config(p2))
    assert h1 == config_hash(load_config(p1, {"threads": 8, "out": "elsewhere"}))
    assert h1 != config_hash(load_config(p1, {"seed": 12}))
    with pytest.raises(ConfigError):
        load_config(p1, {"threads": 0})


def test_emit_plots_empty(tmp_path):
    assert emit_plots({}, tmp_path / "plots") == []
    assert not (tmp_path / "plots").exists()
