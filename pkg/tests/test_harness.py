import csv
import json

import numpy as np
import pytest

from rfspin.harness import ConfigError, parse_config, run_experiment, write_outputs
from rfspin.harness.cli import main
from rfspin.harness.config import load_config, read_manifest, replica_seed
from rfspin.harness.stats import coverage, hoeffding_halfwidth, hoeffding_interval, mean_stderr, median_iqr


def _config(**kw):
    return parse_config({"experiment": "fluc-decay", **kw})


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_validation():
    cfg = _config()
    assert cfg.replicas == 30 and cfg.spec.kind == "rfim"
    for bad in [{"replicas": 5}, {"L": []}, {"model": {"kind": "ising"}}, {"unknown": 1},
                {"model": {"kind": "potts", "q": 2}}, {"experiment": "nope"}]:
        with pytest.raises(ConfigError):
            parse_config({"experiment": "fluc-decay", **bad})


def test_load_config_errors(tmp_path):
    (tmp_path / "a.json").write_text("[1, 2]")
    (tmp_path / "b.json").write_text("{not json")
    for name in ("a.json", "b.json", "missing.json"):
        with pytest.raises(ConfigError):
            load_config(tmp_path / name)


def test_replica_seeds_are_stable_and_distinct():
    seeds = {replica_seed(0, L, r) for L in (2, 3) for r in range(50)}
    assert len(seeds) == 100
    assert replica_seed(7, 2, 3) == replica_seed(7, 2, 3)


def test_stats_helpers():
    m, se = mean_stderr([1.0, 2.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1 / np.sqrt(3))
    assert median_iqr([1, 2, 3, 4, 5]) == (3.0, 2.0, 4.0)
    assert hoeffding_halfwidth(100, 0, 1) == pytest.approx(np.sqrt(np.log(40) / 200))
    with pytest.raises(ValueError):
        hoeffding_interval([2.0], 0, 1)


def test_hoeffding_coverage_on_synthetic_data():
    hoeff, normal = coverage(lambda rng, n: rng.beta(0.3, 0.3, n), 0.5, 40, 2000, 0.0, 1.0)
    assert hoeff >= 0.95
    assert normal >= 0.9


def test_fluc_decay_outputs(tmp_path):
    cfg = _config(L=[1, 2], output_dir=str(tmp_path))
    result = run_experiment(cfg)
    paths = write_outputs(result, cfg)
    names = {p.name for p in paths}
    assert {"fluc_decay.csv", "fluc_decay_summary.csv", "manifest.json"} <= names
    rows = _read_csv(tmp_path / "fluc_decay.csv")
    assert len(rows) == 60
    assert all(0 <= float(r["fluc"]) <= 2 for r in rows)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["csv_schema"] == 1 and set(manifest["outputs"]) == names - {"manifest.json"}


def test_fluc_decay_limits():
    hot = run_experiment(_config(L=[1, 2], model={"beta": 1e-6}))
    assert max(hot.summary["medians"]) < 1e-4
    cold = run_experiment(_config(L=[2], model={"beta": 5.0, "lam": 0.0}))
    assert cold.summary["medians"][0] > 1.99


def test_results_do_not_depend_on_worker_count():
    one = run_experiment(_config(L=[1, 2], workers=1))
    two = run_experiment(_config(L=[1, 2], workers=2))
    assert repr(one.tables) == repr(two.tables)


def test_weighted_fluc_zero_and_checkerboard():
    zero = run_experiment(parse_config({"experiment": "weighted-fluc", "L": [1], "weight": "zero"}))
    assert all(r["fluc_w"] == 0.0 for r in zero.tables["weighted_fluc.csv"][1])
    anti = run_experiment(parse_config({"experiment": "weighted-fluc", "L": [1], "weight": "checkerboard",
                                        "model": {"antiferro": True}}))
    assert anti.summary["cap_violations"] == 0


def test_magnetization_decay_rejects_discrete_ising():
    with pytest.raises(ConfigError):
        run_experiment(parse_config({"experiment": "mag-decay"}))


def test_magnetization_decay_ordered_control():
    cfg = parse_config({"experiment": "mag-decay", "L": [4],
                        "model": {"kind": "clock", "d": 1, "beta": 10.0, "lam": 0.01, "h": [0.0, 0.0]}})
    assert run_experiment(cfg).summary["means"][0] > 0.9


def test_model_facts_negative_control():
    cfg = parse_config({"experiment": "model-facts", "L": [2],
                        "model": {"kind": "potts", "q": 3, "h": [1.0, 0.0, 0.0]}})
    res = run_experiment(cfg)
    assert res.summary["facts_hold"] is None
    assert res.summary["means"][0] > 1 / 3


def test_alpha_for_symmetric_ising():
    res = run_experiment(parse_config({"experiment": "alpha", "L": [2, 4], "model": {"beta": 0.5}}))
    rows = res.tables["alpha.csv"][1]
    small, large = rows[0], rows[1]
    assert abs(large["alpha_hat"]) <= max(large["width"], 4 * large["stderr"])
    assert large["width"] < small["width"]


def test_partition_scan_outputs(tmp_path):
    cfg = parse_config({"experiment": "partition-scan", "L": [4, 8], "criterion": {"kind": "field_quantile"},
                        "output_dir": str(tmp_path)})
    write_outputs(run_experiment(cfg), cfg)
    data = json.loads((tmp_path / "partition_L8.json").read_text())
    assert {"Q", "uncovered", "per_level", "lower_bound_goodness"} <= set(data)
    assert len(_read_csv(tmp_path / "partition_scan.csv")) == 2


def test_cli_exit_codes_and_replay(tmp_path, capsys):
    out = tmp_path / "run"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "fluc-decay", "L": [1, 2]}))
    assert main(["fluc-decay", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "again")]) == 0
    assert "replay identical" in capsys.readouterr().out
    config, expected = read_manifest(out / "manifest.json")
    assert "fluc_decay.csv" in expected
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["outputs"]["fluc_decay.csv"] = "0" * 64
    (out / "manifest.json").write_text(json.dumps(manifest))
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "third")]) == 1
    assert main(["fluc-decay", "--config", str(cfg), "--replicas", "3"]) == 2
    assert main(["mag-decay", "--config", str(cfg)]) == 2
    assert main(["fluc-decay", "--config", str(tmp_path / "missing.json")]) == 2


def test_cli_convergence_failure(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "fluc-decay", "L": [1], "exact_cap": 1,
                               "model": {"kind": "potts", "q": 3, "beta": 2.0}, "mcmc": {"sweeps": 10, "burn_in": 0, "chains": 2}}))
    assert main(["fluc-decay", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_cli_plot(tmp_path):
    pytest.importorskip("matplotlib")
    cfg = _config(L=[1, 2], output_dir=str(tmp_path))
    write_outputs(run_experiment(cfg), cfg)
    png = tmp_path / "fig.png"
    assert main(["plot", str(tmp_path / "fluc_decay_summary.csv"), "--y", "median", "--out", str(png)]) == 0
    assert png.stat().st_size > 0
