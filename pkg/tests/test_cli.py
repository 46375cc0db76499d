import json
import subprocess
import sys

import pytest

from gffmart.cli import ExperimentConfig, SUITES, _coerce, main, read_config_file
from gffmart.errors import ConfigurationError


def _checks(path):
    return {c["check"]: c for c in json.loads((path / "results.json").read_text())["checks"]}


def test_green_checks_pass(tmp_path):
    assert main(["run", "green-checks", "--out", str(tmp_path)]) == 0
    checks = _checks(tmp_path)
    assert all(c["verdict"] != "FAIL" for c in checks.values())
    for f in ("results.json", "run_metadata.json", "config.txt"):
        assert (tmp_path / f).exists()


def test_results_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", "she-covariance", "--seed", "3", "--out", str(out)]) == 0
    assert (a / "results.json").read_bytes() == (b / "results.json").read_bytes()
    assert (a / "config.txt").read_text() == (b / "config.txt").read_text()


def test_unknown_experiment_exit_code(tmp_path, capsys):
    assert main(["run", "no-such-suite", "--out", str(tmp_path)]) == 2
    assert main(["frobnicate"]) == 2


def test_budget_exit_code(tmp_path):
    assert main(["run", "stationarity", "--budget", "100", "--out", str(tmp_path)]) == 3
    assert not (tmp_path / "results.json").exists()


def test_list(capsys):
    assert main(["list"]) == 0
    assert capsys.readouterr().out.split() == list(SUITES)


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nseed = 5\neps = 1/2, 1/4\nplots = yes\n")
    raw = read_config_file(str(cfg))
    assert raw == {"seed": "5", "eps": "1/2, 1/4", "plots": "yes"}
    assert _coerce("eps", raw["eps"]) == [0.5, 0.25]
    assert _coerce("plots", raw["plots"]) is True
    out = tmp_path / "o"
    assert main(["run", "green-checks", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
    text = (out / "config.txt").read_text()
    assert "seed = 9" in text and "eps = 0.5,0.25" in text


def test_plots_written(tmp_path):
    assert main(["run", "boundary-decay", "--plots", "--out", str(tmp_path)]) == 0
    svg = (tmp_path / "collar_series.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["run", "green-checks", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig("green-checks", d=4)
    with pytest.raises(ConfigurationError):
        ExperimentConfig("green-checks", eps=[0.1, -1])
    a = ExperimentConfig("green-checks", out="x", workers=3)
    b = ExperimentConfig("green-checks", out="y", workers=1)
    assert a.digest() == b.digest()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gffmart", "run", "boundary-decay", "--out", str(tmp_path)],
                       capture_output=True, text=True, timeout=300)
    assert r.returncode == 0, r.stdout + r.stderr
    checks = _checks(tmp_path)
    assert any("white" in k and c["verdict"] in ("PASS", "INFO") for k, c in checks.items())
