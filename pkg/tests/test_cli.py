import json

import pytest
from click.testing import CliRunner

from ccc.cli import main
from ccc.condense import allocate_budget
from ccc.graph import load_snapshot

SMALL = [
    "--set", "bench.num_tasks=3",
    "--set", "bench.nodes_per_task=40",
    "--set", "bench.feature_dim=6",
]
FAST = [
    "--set", "model.hidden_dim=8",
    "--set", "model.history_dim=6",
    "--set", "model.history_epochs=5",
    "--set", "model.task_epochs=5",
]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def stream_dir(runner, tmp_path):
    out = tmp_path / "stream"
    res = runner.invoke(main, ["generate", "--out", str(out), *SMALL])
    assert res.exit_code == 0, res.output
    return out


def test_generate_writes_files_and_is_reproducible(runner, stream_dir, tmp_path):
    names = sorted(p.name for p in stream_dir.iterdir())
    assert names == ["manifest.json", "snapshot_0000.json", "snapshot_0001.json", "snapshot_0002.json"]
    again = tmp_path / "again"
    runner.invoke(main, ["generate", "--out", str(again), *SMALL])
    for name in names:
        assert (stream_dir / name).read_bytes() == (again / name).read_bytes()


def test_generate_rejects_bad_churn(runner, tmp_path):
    res = runner.invoke(main, ["generate", "--out", str(tmp_path / "x"), "--set", "bench.churn_rate=1.5"])
    assert res.exit_code == 2
    assert "bench.churn_rate" in res.output


def test_unknown_key_and_bad_type(runner, tmp_path):
    res = runner.invoke(main, ["generate", "--out", str(tmp_path / "x"), "--set", "bench.flavour=1"])
    assert res.exit_code == 2 and "bench.flavour" in res.output
    res = runner.invoke(main, ["generate", "--out", str(tmp_path / "x"), "--set", "bench.seed=\"a\""])
    assert res.exit_code == 2


def test_config_file(runner, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bench": {"num_tasks": 2, "nodes_per_task": 20}}))
    res = runner.invoke(main, ["generate", "--config", str(cfg), "--out", str(tmp_path / "s")])
    assert res.exit_code == 0
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["num_tasks"] == 2
    res = runner.invoke(main, ["generate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "s")])
    assert res.exit_code == 3


def _run(runner, stream_dir, out, *extra):
    return runner.invoke(
        main, ["run", "--stream", str(stream_dir), "--out", str(out), "--run-id", "r", "--arms", "ccc,finetune", *FAST, *extra]
    )


def _strip_wall(doc):
    for arm in doc["arms"]:
        arm.pop("wall_time")
    return doc


def test_run_writes_results_and_is_deterministic(runner, stream_dir, tmp_path):
    res = _run(runner, stream_dir, tmp_path / "a")
    assert res.exit_code == 0, res.output
    assert "PM" in res.output and "finetune" in res.output
    doc = json.loads((tmp_path / "a" / "r" / "result.json").read_text())
    assert [a["arm"] for a in doc["arms"]] == ["ccc", "finetune"]
    _run(runner, stream_dir, tmp_path / "b")
    doc_b = json.loads((tmp_path / "b" / "r" / "result.json").read_text())
    assert _strip_wall(doc) == _strip_wall(doc_b)


def test_run_dump_embeddings(runner, stream_dir, tmp_path):
    res = _run(runner, stream_dir, tmp_path / "e", "--dump-embeddings")
    assert res.exit_code == 0, res.output
    arm = tmp_path / "e" / "r" / "ccc"
    assert (arm / "embeddings_task01.json").exists()
    assert (arm / "history_artifacts_task02.json").exists()
    emb = json.loads((arm / "embeddings_task02.json").read_text())
    assert emb["current_dim"] == 8 and emb["historical_dim"] == 6


def test_run_missing_snapshot(runner, stream_dir, tmp_path):
    (stream_dir / "snapshot_0001.json").unlink()
    res = _run(runner, stream_dir, tmp_path / "m")
    assert res.exit_code == 3
    assert runner.invoke(main, ["run", "--stream", str(tmp_path / "none")]).exit_code == 3


def test_run_unknown_arm(runner, stream_dir, tmp_path):
    res = runner.invoke(main, ["run", "--stream", str(stream_dir), "--arms", "magic", "--out", str(tmp_path)])
    assert res.exit_code == 2 and "run.arms" in res.output


def test_eval_recomputes_metrics(runner, stream_dir, tmp_path):
    _run(runner, stream_dir, tmp_path / "v")
    res_doc = json.loads((tmp_path / "v" / "r" / "ccc" / "result.json").read_text())
    res = runner.invoke(main, ["eval", str(tmp_path / "v" / "r" / "ccc" / "predictions.json")])
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output)
    assert doc["pm"] == res_doc["metrics"]["pm"]
    assert doc["pairwise_fm"] == res_doc["metrics"]["pairwise_fm"]
    assert runner.invoke(main, ["eval", str(tmp_path / "absent.json")]).exit_code == 3


def test_condense_command(runner, stream_dir, tmp_path):
    snap = stream_dir / "snapshot_0000.json"
    out = tmp_path / "c.json"
    res = runner.invoke(main, ["condense", str(snap), "--out", str(out), "--budget", "12"])
    assert res.exit_code == 0, res.output
    doc = json.loads(out.read_text())
    hist = {}
    for node in doc["nodes"]:
        hist[node["y"]] = hist.get(node["y"], 0) + 1
    s = load_snapshot(snap)
    counts = {}
    for y in s.labels:
        counts[y] = counts.get(y, 0) + 1
    assert hist == allocate_budget(counts, 12)


def test_condense_malformed_snapshot(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"timestep": 0, "nodes": [{"id": 1, "x": [0.0], "y": 0}], "edges": [[1, 1]]}))
    res = runner.invoke(main, ["condense", str(bad), "--out", str(tmp_path / "o.json")])
    assert res.exit_code == 2
    assert runner.invoke(main, ["condense", str(tmp_path / "x.json"), "--out", str(tmp_path / "o.json")]).exit_code == 3


def test_gradcheck_command(runner):
    res = runner.invoke(main, ["gradcheck", "--instances", "3"])
    assert res.exit_code == 0, res.output
    assert "gcn_forward" in res.output and "FAIL" not in res.output
    bad = runner.invoke(main, ["gradcheck", "--instances", "2", "--inject-fault", "0.01"])
    assert bad.exit_code == 1 and "FAIL" in bad.output
