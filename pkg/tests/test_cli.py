import json
import time

import pytest

from wickpressure import io
from wickpressure.cli import main

SMOKE = """\
experiment: smoke
dim: 2
beta: 0.5
seed: 3
realizations: 500
grid: {y: 16, z: 8}
"""


@pytest.fixture
def smoke(tmp_path):
    p = tmp_path / "smoke.yaml"
    p.write_text(SMOKE)
    return p


def test_smoke_run_passes_quickly_and_deterministically(smoke, tmp_path):
    t0 = time.perf_counter()
    assert main(["run", "--config", str(smoke), "--output", str(tmp_path / "a")]) == 0
    assert time.perf_counter() - t0 < 60
    assert main(["run", "--config", str(smoke), "--output", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "summary.json").read_bytes()
    assert a == (tmp_path / "b" / "summary.json").read_bytes()
    summary = json.loads(a)
    assert summary["status"] == "pass"
    assert {"multiplier_decay", "s_transform", "phi_consistency", "gmc_first_moment"} <= set(summary["checks"])
    m = io.Manifest.load(tmp_path / "a")
    assert m.verify() == []
    assert {"field_000000.tgf", "family.tgf", "phi.tgf", "summary.json"} <= set(m.entries)
    # workers change nothing
    assert main(["run", "--config", str(smoke), "--workers", "2", "--output", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "summary.json").read_bytes().replace(b'"workers": 2', b'"workers": 1') == a


def test_corrupted_field_is_a_checksum_failure(smoke, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(smoke), "--output", str(out)]) == 0
    assert main(["report", "--config", str(smoke), "--output", str(out)]) == 0
    blob = bytearray((out / "field_000000.tgf").read_bytes())
    blob[100] ^= 0xFF
    (out / "field_000000.tgf").write_bytes(bytes(blob))
    capsys.readouterr()
    assert main(["report", "--config", str(smoke), "--output", str(out)]) == 3
    err = capsys.readouterr().err
    assert "checksum failure" in err and "field_000000.tgf" in err


def test_verify_reuses_persisted_family_and_checks_it(smoke, tmp_path):
    out = str(tmp_path / "fam")
    assert main(["family", "--config", str(smoke), "--output", out]) == 0
    assert main(["verify", "--config", str(smoke), "--output", out, "--targets", "20"]) == 0
    doc = json.loads((tmp_path / "fam" / "verification.json").read_text())
    assert len(doc["targets"]) == 20 and doc["realizations"] == 1000
    phi = tmp_path / "fam" / "phi.tgf"
    phi.write_bytes(phi.read_bytes()[:-8] + b"\0" * 8)
    assert main(["verify", "--config", str(smoke), "--output", out]) == 3


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("beta: 1.5\ngrid: {y: 32, z: 24}\nbogus: 1\n")
    assert main(["run", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "beta squared exceeds dimension" in err and "does not nest" in err and "bogus" in err
    assert main(["run", "--beta", "2.0", "--output", str(tmp_path)]) == 2


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["decay-check"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["green", "--source", "a,b"])
    assert exc.value.code == 2


def test_decay_check(tmp_path, capsys):
    assert main(["decay-check", "--alpha", "0.25", "--n", "256", "--output", str(tmp_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["pass"] and abs(doc["slope"] + 1.75) <= 0.15
    io.validate(json.loads((tmp_path / "fit_report.json").read_text()), "fit_report")
    assert main(["decay-check", "--alpha", "0.25", "--n", "32", "--output", str(tmp_path)]) == 2


def test_decay_check_failure_exit_1(tmp_path):
    assert main(["decay-check", "--alpha", "0.25", "--n", "128", "--tolerance", "1e-6", "--output", str(tmp_path)]) == 1


def test_solve_green_sample_gmc(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("WICKPRESSURE_OUTPUT", str(tmp_path))
    base = ["--grid-y", "16", "--grid-z", "8"]
    assert main(["solve", *base, "--pole", "2,4"]) == 0
    assert json.loads(capsys.readouterr().out)["converged"]
    assert main(["green", *base, "--source", "3,3"]) == 0
    assert json.loads(capsys.readouterr().out)["symmetry"] < 1e-8
    assert main(["sample-field", *base, "--index", "0", "5"]) == 0
    capsys.readouterr()
    assert main(["gmc-stats", *base, "--realizations", "1000"]) == 0
    m = io.Manifest.load(tmp_path / "run")
    assert m.verify() == []
    assert {"solve.tgf", "green.tgf", "field_000005.tgf", "gmc_prediction.json", "gmc_ensemble.csv"} <= set(m.entries)
    rows = (tmp_path / "run" / "gmc_ensemble.csv").read_text().splitlines()
    assert rows[0] == "realization_id,mass,psi_cos_y0" and len(rows) == 1001


def test_numerical_failure_exit_3_keeps_partial_artifacts(smoke, tmp_path):
    out = tmp_path / "fail"
    assert main(["run", "--config", str(smoke), "--max-iter", "1", "--output", str(out)]) == 3
    failure = json.loads((out / "failure.json").read_text())
    assert failure["stage"] == "family"
    assert "field_000000.tgf" in failure["retained"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "error"
    assert io.Manifest.load(out).verify() == []
