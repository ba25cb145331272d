import csv
import json
from pathlib import Path

import numpy as np
import pytest

from obd.cli import RUN_ROOT_ENV, main, strip_timings
from obd.manifest import read_manifest

SMALL = ["--embed-dim", "8", "--hidden", "8", "--fit-steps", "30", "--num-sequences", "8", "--eval-sequences", "8"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    run = tmp_path_factory.mktemp("cli") / "run"
    assert main(["collect", "--out", str(run), *SMALL]) == 0
    return run


def report(path: Path) -> dict:
    return json.loads(path.read_text())


def test_collect_layout(run_dir):
    for sub in ("model", "covariances", "accumulators", "traces"):
        assert (run_dir / sub / "manifest.json").exists()
    rep = report(run_dir / "report.json")
    assert set(rep["mode_table"]) == {"plain-svd", "input-whiten", "output-whiten", "obd"}
    assert "timings" in rep and rep["config"]["hidden"] == 8
    cov = read_manifest(run_dir / "covariances")
    assert cov["fc1.c_x"].shape == (8, 8)


def test_decompose_ratio_on_square_layer(run_dir):
    assert main(["decompose", "--run", str(run_dir), "--ratio", "0.2"]) == 0
    out = run_dir / "decompose-obd"
    factors = read_manifest(out)
    assert factors["fc1.b"].shape == (8, 3) and factors["fc1.a"].shape == (3, 8)
    rep = report(out / "report.json")
    assert rep["layers"]["fc1"]["rank"] == 3
    assert rep["layers"]["fc1"]["achieved_ratio"] == 1 - 48 / 64
    assert len(rep["mode_table"]) == 4


def test_eval_untouched_is_zero(run_dir, capsys):
    assert main(["eval", "--run", str(run_dir)]) == 0
    assert report(run_dir / "eval.json")["eval"]["delta_loss"] == 0.0


def test_eval_factors_matches_mode_table(run_dir):
    assert main(["decompose", "--run", str(run_dir), "--rank", "2", "--mode", "plain-svd", "--out", str(run_dir / "d2")]) == 0
    assert main(["eval", "--run", str(run_dir), "--factors", str(run_dir / "d2")]) == 0
    got = report(run_dir / "d2" / "eval.json")["eval"]["delta_loss"]
    table = report(run_dir / "d2" / "report.json")["mode_table"]["plain-svd"]["eval"]["delta_loss"]
    assert got == table > 0


def test_compensate_writes_adapter(run_dir):
    assert main(["compensate", "--run", str(run_dir), "--method", "prune24", "--rank", "8"]) == 0
    out = run_dir / "compensate-prune24-obd"
    tensors = read_manifest(out)
    model = read_manifest(run_dir / "model")
    rebuilt = tensors["fc1.w_hat"] + tensors["fc1.b"] @ tensors["fc1.a"]
    assert np.linalg.norm(rebuilt - model["fc1"]) <= 1e-8 * np.linalg.norm(model["fc1"])
    rep = report(out / "report.json")
    assert set(rep["mode_table"]) == {"none", "plain-svd", "input-whiten", "output-whiten", "obd"}


def test_kv_and_diagnose(run_dir):
    assert main(["kv-compress", "--run", str(run_dir), "--heads", "2", "--v-rank", "2", "--k-rank", "8"]) == 0
    rep = report(run_dir / "kv-compress" / "report.json")
    assert rep["k"]["metric_error"] == pytest.approx(0.0, abs=1e-8 * rep["k"]["dim"])
    assert rep["k"]["compression_ratio"] == 0.0
    assert main(["diagnose", "--run", str(run_dir)]) == 0
    rows = list(csv.DictReader((run_dir / "diagnostics.csv").open()))
    rho = [float(r["value"]) for r in rows if r["quantity"] == "rho"]
    assert len(rho) == 2 and all(0 <= v <= 1 for v in rho)
    assert sum(r["quantity"] == "eig_c_x" for r in rows) == 16


def test_verify_exits_zero(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 6


def test_run_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(RUN_ROOT_ENV, str(tmp_path))
    assert main(["collect", "--out", "rel", "--fit-steps", "0", "--num-sequences", "2", "--eval-sequences", "2"]) == 0
    assert (tmp_path / "rel" / "config.json").exists()
    assert main(["eval", "--run", "rel"]) == 0


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["collect", "--out", str(tmp_path / "x"), "--temperature", "0"]) == 2
    assert "temperature" in capsys.readouterr().err
    assert main(["decompose", "--run", str(tmp_path / "missing")]) == 2
    assert main(["nonsense"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 0, "colour": 1}))
    assert main(["collect", "--out", str(tmp_path / "y"), "--config", str(bad)]) == 2


def test_corrupted_manifest_exit_2(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["collect", "--out", str(run), "--fit-steps", "0", "--num-sequences", "2", "--eval-sequences", "2"]) == 0
    entry = json.loads((run / "model" / "manifest.json").read_text())[1]
    (run / "model" / entry["file"]).write_bytes(b"\0" * 3)
    assert main(["eval", "--run", str(run)]) == 2
    assert entry["name"] in capsys.readouterr().err


def test_numerical_failure_exit_3(tmp_path, capsys):
    # one token and no dampening leaves singular covariances
    args = ["collect", "--out", str(tmp_path / "r"), "--fit-steps", "0", "--num-sequences", "1", "--seq-len", "2", "--dampening", "0"]
    assert main(args) == 3
    assert "not positive definite" in capsys.readouterr().err


def test_determinism(tmp_path):
    for name in ("a", "b"):
        run = tmp_path / name
        assert main(["collect", "--out", str(run), *SMALL]) == 0
        assert main(["decompose", "--run", str(run), "--out", str(run / "dec")]) == 0
        assert main(["compensate", "--run", str(run), "--out", str(run / "comp")]) == 0
    a_files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    b_files = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert a_files == b_files
    for rel in a_files:
        a, b = tmp_path / "a" / rel, tmp_path / "b" / rel
        if rel.name == "report.json":
            assert strip_timings(report(a)) == strip_timings(report(b))
            assert json.dumps(strip_timings(report(a)), sort_keys=True) == json.dumps(strip_timings(report(b)), sort_keys=True)
        else:
            assert a.read_bytes() == b.read_bytes(), rel
