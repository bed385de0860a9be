import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from hsbnn import cli
from hsbnn.experiment import (
    ConfigError,
    format_config,
    load_config,
    load_state,
    make_config,
    parse_config_text,
    prior_sample_functions,
    report_dir,
    run_experiment,
)

FAST = ["--set", "n_train=40", "--set", "n_test=30", "--set", "hidden_widths=5", "--set", "eval_samples=10",
        "--set", "weight_norm_samples=10", "--iterations", "20", "--set", "plot_grid_points=9"]


def _schema(name):
    return json.loads(resources.files("hsbnn").joinpath("schemas", name).read_text())


def _strip_time(obj):
    if isinstance(obj, dict):
        return {k: _strip_time(v) for k, v in obj.items() if k != "timestamp"}
    if isinstance(obj, list):
        return [_strip_time(v) for v in obj]
    return obj


def test_config_parsing_rules():
    assert parse_config_text("version = 1\nseed = 3  # comment\n") == {"version": "1", "seed": "3"}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("version = 1\nseed = 1\nseed = 2\n")
    with pytest.raises(ConfigError, match="version"):
        parse_config_text("seed = 1\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("version = 1\nnonsense\n")
    with pytest.raises(ConfigError, match="unknown"):
        make_config({"learningrate": "0.1"})
    with pytest.raises(ConfigError):
        make_config({"version": "2"})
    with pytest.raises(ConfigError):
        make_config({"prior": "gaussian", "family": "structured"})
    with pytest.raises(ConfigError):
        make_config({"p0": "1.5"})


def test_config_file_roundtrip(tmp_path):
    cfg = make_config({"hidden_widths": "7,3", "unit_norm_projection": "false", "seed": "9"})
    path = tmp_path / "run.cfg"
    path.write_text(format_config(cfg))
    again = load_config(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.hidden_widths == (7, 3) and again.unit_norm_projection is False
    assert load_config(path, {"seed": "2"}).seed == 2


def test_report_dir_env_wins(monkeypatch, tmp_path):
    cfg = make_config({"report_dir": "elsewhere"})
    monkeypatch.delenv("HSBNN_REPORT_DIR", raising=False)
    assert str(report_dir(cfg)) == "elsewhere"
    monkeypatch.setenv("HSBNN_REPORT_DIR", str(tmp_path))
    assert report_dir(cfg) == tmp_path


def test_train_writes_valid_reports(tmp_path, capsys):
    out = tmp_path / "r"
    code = cli.main(["train", "--out", str(out), "--set", "replications=2", "--set", "fine_tune_iterations=3", *FAST])
    assert code == cli.EXIT_OK
    agg = json.loads(capsys.readouterr().out)
    jsonschema.validate(agg, _schema("aggregate.schema.json"))
    assert agg["succeeded"] == 2
    for r in range(2):
        rep = json.loads((out / f"replication_{r}.json").read_text())
        jsonschema.validate(rep, _schema("report.schema.json"))
        assert rep["seed"] == r and rep["fine_tuned_metrics"] is not None
        assert (out / f"state_r{r}.npz").exists() and (out / f"predictive_r{r}.tsv").exists()
    post, stats = load_state(out / "state_r0.npz")
    assert post.spec.layer_widths == (1, 5, 1) and stats is not None


def test_runs_are_reproducible(tmp_path):
    cfg = make_config({"n_train": "30", "n_test": "20", "hidden_widths": "4", "iterations": "15", "eval_samples": "5",
                       "weight_norm_samples": "5", "save_state": "false"})
    a, _ = run_experiment(cfg, tmp_path / "a")
    b, _ = run_experiment(cfg, tmp_path / "b")
    assert _strip_time(a) == _strip_time(b)
    ja = json.loads((tmp_path / "a" / "replication_0.json").read_text())
    jb = json.loads((tmp_path / "b" / "replication_0.json").read_text())
    assert ja["timestamp"]["started_utc"] and _strip_time(ja) == _strip_time(jb)


def test_flag_spellings_are_equivalent(tmp_path, capsys):
    cli.main(["train", "--out", str(tmp_path / "a"), *FAST, "--learning-rate", "0.01"])
    cli.main(["train", "--out", str(tmp_path / "b"), *FAST, "--learning_rate", "0.01"])
    a = json.loads((tmp_path / "a" / "replication_0.json").read_text())
    b = json.loads((tmp_path / "b" / "replication_0.json").read_text())
    assert a["config"]["learning_rate"] == 0.01
    assert _strip_time(a) == _strip_time(b)


def test_config_and_input_errors_exit_2(tmp_path, capsys):
    assert cli.main(["train", "--set", "bogus=1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,oops\n")
    code = cli.main(["train", "--out", str(tmp_path / "o"), "--set", f"dataset={bad}", "--iterations", "2"])
    assert code == cli.EXIT_CONFIG
    rep = json.loads((tmp_path / "o" / "replication_0.json").read_text())
    assert rep["failure"]["stage"] == "ingest" and "row 2, column 2" in rep["failure"]["message"]
    assert "unknown config key" in capsys.readouterr().err


def test_numerical_fault_exits_3(tmp_path, capsys):
    code = cli.main(["train", "--out", str(tmp_path), *FAST, "--learning-rate", "1e300"])
    assert code == cli.EXIT_NUMERICAL
    rep = json.loads((tmp_path / "replication_0.json").read_text())
    assert rep["status"] == "failed" and rep["failure"]["kind"] == "numerical"


def test_evaluate_and_prune_commands(tmp_path, capsys):
    cli.main(["train", "--out", str(tmp_path), *FAST])
    capsys.readouterr()
    data = tmp_path / "d.csv"
    assert cli.main(["toy-gen", "--n", "25", "--out", str(data)]) == cli.EXIT_OK
    assert cli.main(["evaluate", "--state", str(tmp_path / "state_r0.npz"), "--data", str(data), "--samples", "5"]) == 0
    ev = json.loads(capsys.readouterr().out)
    assert ev["n"] == 25 and ev["rmse"] > 0
    report = tmp_path / "prune.json"
    assert cli.main(["prune", "--state", str(tmp_path / "state_r0.npz"), "--report", str(report), "--delta", "10"]) == 0
    rep = json.loads(report.read_text())
    assert rep["delta"] == 10.0 and rep["kept"] >= 1
    post, _ = load_state(tmp_path / "state_r0_pruned.npz")
    assert post.spec.layer_widths[1] == rep["kept"]


def test_prior_samples_and_gradient_commands(tmp_path, capsys):
    out = tmp_path / "p.tsv"
    assert cli.main(["prior-samples", "--widths", "5,7", "--count", "2", "--points", "11", "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0].split("\t")
    assert len(header) == 1 + 2 * 2 * 2 and header[1] == "hs_w5_s0"
    assert cli.main(["check-gradients", "--family", "tied"]) == cli.EXIT_OK
    assert json.loads(capsys.readouterr().out)["tied"]["failing"] == 0


def test_prior_samples_share_draws():
    s = prior_sample_functions((20,), count=3, seed=1, c2_override=float("inf"))
    np.testing.assert_array_equal(s.hs[20], s.reg_hs[20])
    t = prior_sample_functions((20,), count=3, seed=1)
    np.testing.assert_array_equal(t.hs[20], s.hs[20])


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "hsbnn", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "prior-samples" in res.stdout
