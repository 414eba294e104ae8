import csv
import json
import subprocess
import sys

import pytest

from tcdiffuser.cli import main
from tcdiffuser.checkpoint import load_checkpoint
from tcdiffuser.data import load_dataset
from tcdiffuser.envs import classify_branch, env_for_dataset

TINY = ["--set", "K=5", "--set", "base_width=8", "--set", "dim_mults=1", "--set", "kernel_size=3",
        "--set", "L=8", "--set", "T_HC=2", "--set", "id_epochs=2", "--set", "log_every=1"]


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.tcd"
    assert run("gen-data", "--env", "immediate", "--n", 20, "--seed", 3, "--out", data) == 0
    assert run("train", "--dataset", data, "--out", root / "run", "--flags", "tcd|rtg-ts",
               "--steps", 3, "--seed", 1, *TINY) == 0
    return root, data


def test_gen_data_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("gen-data", "--env", "historical", "--n", 300, "--seed", 5,
                   "--out", tmp_path / f"{name}.tcd") == 0
    assert (tmp_path / "a.tcd").read_bytes() == (tmp_path / "b.tcd").read_bytes()
    ds = load_dataset(tmp_path / "a.tcd")
    assert len(ds) == 300 and {t.label for t in ds.trajectories} == {0, 1, 2}


def test_gen_data_divisibility_is_config_error(tmp_path, capsys):
    assert run("gen-data", "--env", "historical", "--n", 301, "--out", tmp_path / "x.tcd") == 1
    assert "multiple of 3" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path):
    assert run("nonsense") == 1
    assert run("gen-data", "--set", "bogus=1", "--out", tmp_path / "x.tcd") == 1
    assert run("gen-data", "--set", "noequals", "--out", tmp_path / "x.tcd") == 1
    assert run("train", "--flags", "tcd|nope") == 1


def test_runtime_errors_exit_2(tmp_path):
    assert run("train", "--dataset", tmp_path / "missing.tcd", "--out", tmp_path) == 2
    bad = tmp_path / "bad.tcd"
    bad.write_bytes(b"garbage!" * 4)
    assert run("train", "--dataset", bad, "--out", tmp_path) == 2


def test_train_writes_checkpoints_and_logs(workspace):
    root, _ = workspace
    run_dir = root / "run"
    for name in ("tcd", "rtg-ts"):
        trained, inverse, meta = load_checkpoint(run_dir / f"{name}.ckpt")
        assert meta["preset"] == name and inverse is not None
        records = [json.loads(x) for x in (run_dir / f"{name}.log.ndjson").read_text().splitlines()]
        assert [r["step"] for r in records] == [1, 2, 3]
        assert all(set(r) == {"step", "loss", "wall_ms"} for r in records)
    assert "K = 5" in (run_dir / "config.cfg").read_text()


def test_train_is_deterministic(workspace, tmp_path):
    root, data = workspace
    assert run("train", "--dataset", data, "--out", tmp_path, "--flags", "tcd", "--steps", 3,
               "--seed", 1, *TINY) == 0
    assert (tmp_path / "tcd.ckpt").read_bytes() == (root / "run" / "tcd.ckpt").read_bytes()


def test_eval_report(workspace):
    root, data = workspace
    out = root / "run"
    assert run("eval", "--dataset", data, "--out", out, "--flags", "tcd|rtg-ts",
               "--episodes", 2, "--top-y", "1,3", "--offset", "0,2", *TINY) == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["runs"]) == 2 * 2 * 2
    for r in report["runs"]:
        for ep in r["episodes"]:
            assert ep["return"] == sum(ep["rewards"])
            assert ep["steps"] == 20
    dumps = sorted((out / "trajectories").glob("*.csv"))
    assert len(dumps) == 16


def test_eval_rejects_schedule_mismatch(workspace, capsys):
    root, data = workspace
    args = [a if a != "K=5" else "K=6" for a in TINY]
    assert run("eval", "--dataset", data, "--out", root / "run", "--flags", "tcd",
               "--episodes", 1, *args) == 2
    assert "schedule" in capsys.readouterr().err


def test_export_dataset_csv(workspace, tmp_path):
    _, data = workspace
    assert run("export", "--input", data, "--out", tmp_path / "a") == 0
    assert run("export", "--input", data, "--out", tmp_path / "b") == 0
    exp_a, exp_b = tmp_path / "a" / "export", tmp_path / "b" / "export"
    files = sorted(p.name for p in exp_a.glob("traj_*.csv"))
    assert len(files) == 20
    for name in files + ["index.csv"]:
        assert (exp_a / name).read_bytes() == (exp_b / name).read_bytes()
    ds = load_dataset(data)
    spec = env_for_dataset(ds)
    rows = list(csv.DictReader((exp_a / "index.csv").open()))
    for row, traj in zip(rows, ds.trajectories):
        oracle = classify_branch(traj.states[spec.future_start:], spec, spec.future_start)
        assert int(row["label"]) == oracle.index
        assert float(row["template_distance"]) >= 0.0


def test_export_report_and_json(workspace, tmp_path):
    root, data = workspace
    report = root / "run" / "report.json"
    if not report.exists():
        pytest.skip("report is produced by test_eval_report")
    assert run("export", "--input", report, "--out", tmp_path) == 0
    assert (tmp_path / "export" / "episodes.csv").exists()
    assert run("export", "--input", data, "--format", "json", "--out", tmp_path) == 0
    assert run("export", "--input", data, "--format", "xml", "--out", tmp_path) == 1


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("env = prospective\nn = 10\nseed = 2\n")
    assert run("gen-data", "--config", cfg, "--n", 4, "--out", tmp_path / "d.tcd") == 0
    ds = load_dataset(tmp_path / "d.tcd")
    assert len(ds) == 4 and ds.env.kind == "prospective"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tcdiffuser", "gen-data", "--env", "prospective",
                           "--n", "4", "--out", str(tmp_path / "d.tcd")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["trajectories"] == 4
