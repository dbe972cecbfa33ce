import json
import subprocess
import sys

import pytest

from pacclearn.cli import EXIT_CERTIFICATE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main


def _config(tmp_path, **extra):
    doc = {
        "config_version": 1,
        "seed": 0,
        "dataset": {"path": "builtin:fairness_small.csv", "schema": "builtin:fairness_schema.json"},
        "split": {"fractions": [0.7, 0.0, 0.3]},
        "model": {"kind": "mlp", "hidden": [8]},
        "constraints": [
            {"id": "gender", "kind": "pointwise", "loss": "kl", "threshold": 0.001, "invariance": "gender"}
        ],
        "solver": {"iterations": 10, "dual_optimizer": "adam", "dual_step": 0.01},
        "evaluation": {"sensitivity": "gender", "eps_grid": [0.0, 0.05]},
        "certify": {"epsilon": 1.0},
        "output": {"dir": "out"},
    }
    doc.update(extra)
    p = tmp_path / "run.json"
    p.write_text(json.dumps(doc))
    return p


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_train_writes_outputs(tmp_path, capsys):
    cfg = _config(tmp_path)
    code, out, _ = _run(capsys, "train", "--config", str(cfg))
    assert code == EXIT_OK
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert json.loads(out) == metrics
    for key in ("clean_accuracy", "slack.gender", "violation.gender", "dual_l1.gender", "sensitivity_rate",
                "robust_accuracy.0.0", "robust_accuracy.0.05", "train_objective"):
        assert key in metrics
    for name in ("timing.json", "model.npz", "convergence.csv", "dual_histogram.csv", "prevalence.csv"):
        assert (tmp_path / "out" / name).is_file()
    assert "wall_clock_seconds" in json.loads((tmp_path / "out" / "timing.json").read_text())


def test_metrics_are_byte_identical(tmp_path, capsys):
    cfg = _config(tmp_path)
    _run(capsys, "train", "--config", str(cfg))
    first = (tmp_path / "out" / "metrics.json").read_bytes()
    report = (tmp_path / "out" / "convergence.csv").read_bytes()
    _run(capsys, "train", "--config", str(cfg))
    assert (tmp_path / "out" / "metrics.json").read_bytes() == first
    assert (tmp_path / "out" / "convergence.csv").read_bytes() == report


def test_seed_env_and_set(tmp_path, capsys, monkeypatch):
    cfg = _config(tmp_path)
    _run(capsys, "train", "--config", str(cfg))
    base = (tmp_path / "out" / "metrics.json").read_text()
    monkeypatch.setenv("PACC_SEED", "5")
    _run(capsys, "train", "--config", str(cfg))
    seeded = (tmp_path / "out" / "metrics.json").read_text()
    assert seeded != base
    code, _, _ = _run(capsys, "train", "--config", str(cfg), "--set", "seed=0", "--set", "output.dir=o2")
    assert code == EXIT_OK
    assert (tmp_path / "o2" / "metrics.json").read_text() == base


def test_bad_fractions_exit_1(tmp_path, capsys):
    cfg = _config(tmp_path)
    code, out, err = _run(capsys, "train", "--config", str(cfg), "--set", "split.fractions=[0.7, 0.5, 0.3]")
    assert code == EXIT_CONFIG and out == ""
    doc = json.loads(err)
    assert doc["error"] == "ConfigError" and doc["field"] == "split.fractions"


def test_missing_config_and_bad_data(tmp_path, capsys):
    code, _, err = _run(capsys, "train", "--config", str(tmp_path / "nope.json"))
    assert code == EXIT_CONFIG and json.loads(err)["field"] == "--config"
    (tmp_path / "bad.csv").write_text("x1,y\n1,0\n")
    cfg = _config(tmp_path, dataset={"path": "bad.csv", "schema": "builtin:fairness_schema.json"})
    code, _, err = _run(capsys, "train", "--config", str(cfg))
    assert code == EXIT_CONFIG and json.loads(err)["error"] == "SchemaError"


def test_infeasible_exit_2(tmp_path, capsys):
    cfg = _config(
        tmp_path,
        constraints=[{"id": "impossible", "kind": "average", "loss": "nll", "threshold": 0.0}],
        solver={"iterations": 50, "dual_step": 100.0, "dual_cap": 100.0},
    )
    code, _, err = _run(capsys, "train", "--config", str(cfg))
    assert code == EXIT_NUMERIC
    doc = json.loads(err)
    assert doc["error"] == "InfeasibilityError" and doc["constraint"] == "impossible"


def test_certify_pass_and_fail(tmp_path, capsys):
    cfg = _config(tmp_path)
    _run(capsys, "train", "--config", str(cfg))
    code, out, _ = _run(capsys, "certify", "--config", str(cfg))
    assert code == EXIT_OK
    cert = json.loads(out)
    assert cert["verdict"] is True
    assert json.loads((tmp_path / "out" / "certificate.json").read_text()) == cert
    code, _, err = _run(capsys, "certify", "--config", str(cfg), "--set", "certify.epsilon=1e-9")
    assert code == EXIT_CERTIFICATE
    assert json.loads(err)["certificate"]["verdict"] is False


def test_commands_need_a_model(tmp_path, capsys):
    cfg = _config(tmp_path)
    code, _, err = _run(capsys, "certify", "--config", str(cfg))
    assert code == EXIT_CONFIG and "train first" in json.loads(err)["message"]


def test_attack_sweep_and_sensitivity(tmp_path, capsys):
    cfg = _config(tmp_path)
    _, out, _ = _run(capsys, "train", "--config", str(cfg))
    trained = json.loads(out)
    code, out, _ = _run(capsys, "attack-sweep", "--config", str(cfg), "--set", "evaluation.eps_grid=[0.0, 0.1]")
    assert code == EXIT_OK
    sweep = json.loads(out)
    assert sweep["robust_accuracy.0.0"] == trained["clean_accuracy"]
    assert sweep["robust_accuracy.0.1"] <= sweep["robust_accuracy.0.0"]
    lines = (tmp_path / "out" / "robust_accuracy.csv").read_text().splitlines()
    assert lines[0] == "epsilon,robust_accuracy" and len(lines) == 3
    code, out, _ = _run(capsys, "sensitivity", "--config", str(cfg))
    assert code == EXIT_OK
    sens = json.loads(out)
    assert sens["sensitivity_rate"] == trained["sensitivity_rate"]
    assert 0.0 <= sens["dual_zero_fraction"] <= 1.0


def test_model_mismatch(tmp_path, capsys):
    cfg = _config(tmp_path)
    _run(capsys, "train", "--config", str(cfg))
    code, _, err = _run(capsys, "sensitivity", "--config", str(cfg), "--set", "model.hidden=[4]")
    assert code == EXIT_CONFIG and json.loads(err)["field"] == "model"


def test_ecrm_oracle(tmp_path, capsys):
    cfg = _config(tmp_path, constraints=[
        {"id": "loose", "kind": "average", "loss": "nll", "threshold": 5.0},
    ], ecrm={"hypotheses": 12})
    code, out, _ = _run(capsys, "ecrm-oracle", "--config", str(cfg))
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["hypotheses"] == 12 and doc["feasible_count"] == 12
    assert 0 <= doc["index"] < 12
    adv = _config(tmp_path, constraints=[
        {"id": "adv", "kind": "average", "loss": "nll", "threshold": 1.0, "source": "adversarial"},
    ])
    code, _, err = _run(capsys, "ecrm-oracle", "--config", str(adv))
    assert code == EXIT_CONFIG and json.loads(err)["field"] == "constraints"


def test_console_entry_point(tmp_path):
    cfg = _config(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "pacclearn.cli", "train", "--config", str(cfg), "--set", "split.fractions=[2, -1]"],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_CONFIG
    assert json.loads(proc.stderr)["field"] == "split.fractions"


def test_unknown_command(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fly", "--config", "x"])
    assert exc.value.code == EXIT_CONFIG
    assert json.loads(capsys.readouterr().err)["error"] == "UsageError"
