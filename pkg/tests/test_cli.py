import copy
import json

import pytest

from resilient_consensus.cli import main
from resilient_consensus.experiment import load_config


@pytest.fixture
def short_config(tmp_path):
    cfg, _ = load_config("paper_beta1")
    cfg = copy.deepcopy(cfg)
    cfg["sim"]["horizon"] = 0.5
    cfg["name"] = "short"
    path = tmp_path / "short.json"
    path.write_text(json.dumps(cfg))
    return path


def test_validate_bundled(capsys):
    assert main(["validate", "paper_beta1"]) == 0
    out = capsys.readouterr().out
    assert "validation: PASS" in out
    assert "differs from reference" in out


def test_validate_sweep_betas(capsys):
    assert main(["validate", "paper_sweep"]) == 0
    out = capsys.readouterr().out
    assert [l for l in out.splitlines() if l.startswith("beta = ")] == ["beta = 0", "beta = 1", "beta = 2.5", "beta = 5"]


def test_validate_failure_exit_code(tmp_path, capsys):
    cfg, _ = load_config("paper_beta1")
    cfg["design"]["epsilon"] = 1.0
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    assert main(["validate", str(p)]) == 1
    assert "slack" in capsys.readouterr().out


def test_missing_file_exit_code(capsys):
    assert main(["run", "/nonexistent/x.json", "--no-files"]) == 2
    assert "error" in capsys.readouterr().err


def test_design_report_json(capsys):
    assert main(["design-report", "paper_beta1", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["norms"]["pzg2"] == pytest.approx(41.0)


def test_run_and_replay(short_config, tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["run", str(short_config), "--out", str(out)]) == 0
    summary = out / "short" / "summary.json"
    assert summary.exists()
    capsys.readouterr()
    assert main(["replay", str(summary)]) == 0
    assert "identical summary" in capsys.readouterr().out


def test_replay_detects_tampering(short_config, tmp_path, capsys):
    out = tmp_path / "runs"
    main(["run", str(short_config), "--out", str(out)])
    summary = out / "short" / "summary.json"
    doc = json.loads(summary.read_text())
    doc["summary"]["M_x"] += 1.0
    summary.write_text(json.dumps(doc))
    assert main(["replay", str(summary)]) == 1


def test_sweep_cli(short_config, tmp_path, capsys):
    assert main(["sweep", str(short_config), "--betas", "1", "2.5", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "smallest inter-event time" in out
    assert (tmp_path / "short_sweep.json").exists()
    assert (tmp_path / "short_beta2.5" / "events.csv").exists()


def test_sweep_with_skipped_beta_is_nonzero(short_config, capsys):
    cfg = json.loads(short_config.read_text())
    cfg["design"]["c1"] = 0.05
    short_config.write_text(json.dumps(cfg))
    assert main(["sweep", str(short_config), "--betas", "1", "5", "--no-files"]) == 1


def test_module_entry_point():
    import subprocess, sys
    r = subprocess.run([sys.executable, "-m", "resilient_consensus", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("validate", "run", "sweep", "design-report", "replay"):
        assert cmd in r.stdout
