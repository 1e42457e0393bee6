"""Command-line entry point: ``ccc generate | run | condense | gradcheck | eval``.

Exit codes: 0 success, 2 config or schema error, 3 missing input,
4 numeric failure (NaN/Inf), 1 failed gradient check.
"""

from __future__ import annotations

import functools
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import metrics as M
from .bench import ConfigError, generate_stream, run_experiment, stream_fingerprint
from .condense import CondenseConfig, CondenseError, allocate_budget, condense_snapshot, default_budget
from .config import load_config
from .gradcheck import run_suite
from .graph import GraphError, GraphSnapshot, load_snapshot, save_snapshot, snapshot_filename
from .nn import NumericError

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4
EXIT_CHECK_FAILED = 1

MANIFEST = "manifest.json"


class MissingInput(Exception):
    pass


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map library exceptions onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MissingInput as exc:
            _fail(EXIT_MISSING, str(exc))
        except NumericError as exc:
            _fail(EXIT_NUMERIC, str(exc))
        except (ConfigError, GraphError, CondenseError, M.MetricsError) as exc:
            _fail(EXIT_CONFIG, str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            _fail(EXIT_CONFIG, f"schema error: {exc}")

    return wrapper


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True))


def load_stream(stream_dir: Path) -> list[GraphSnapshot]:
    if not stream_dir.is_dir():
        raise MissingInput(f"stream directory {stream_dir} does not exist")
    manifest = stream_dir / MANIFEST
    if manifest.exists():
        files = [stream_dir / f for f in json.loads(manifest.read_text())["files"]]
    else:
        files = sorted(stream_dir.glob("snapshot_*.json"))
    missing = [str(f) for f in files if not f.exists()]
    if missing:
        raise MissingInput(f"missing snapshot file(s): {', '.join(missing)}")
    if not files:
        raise MissingInput(f"no snapshots found in {stream_dir}")
    return [load_snapshot(f) for f in files]


@click.group()
def main():
    """Condensation and selective-replay continual learning on dynamic graphs."""


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="JSON run config.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Directory for snapshot files.")
@click.option("--set", "overrides", multiple=True, help="Override a config key, e.g. bench.seed=3.")
@_guard
def generate(config_path, out_dir, overrides):
    """Write a synthetic snapshot stream plus manifest."""
    cfg = _load(config_path, overrides)
    stream = generate_stream(cfg.bench)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in stream:
        save_snapshot(s, out)
    _write_json(
        out / MANIFEST,
        {
            "files": [snapshot_filename(s.timestep) for s in stream],
            "num_tasks": len(stream),
            "bench": cfg.to_dict()["bench"],
            "fingerprint": stream_fingerprint(stream),
        },
    )
    click.echo(f"wrote {len(stream)} snapshots to {out}")


def _load(config_path, overrides):
    if config_path is not None and not Path(config_path).exists():
        raise MissingInput(f"config file {config_path} does not exist")
    return load_config(config_path, list(overrides))


def summary_table(results) -> str:
    lines = [f"{'Method':<14}{'PM':>10}{'FM':>10}", "-" * 34]
    for r in results:
        fm = r.metrics["fm_mean"]
        lines.append(f"{r.arm:<14}{100 * r.metrics['pm']:>9.2f}%{100 * fm:>9.2f}%")
    return "\n".join(lines)


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--stream", "stream_dir", type=click.Path(), required=True, help="Directory of snapshot files.")
@click.option("--arms", default=None, help="Comma-separated arms: ccc, finetune, full_replay.")
@click.option("--out", "out_dir", default=None, help="Results root (default run.output_dir).")
@click.option("--run-id", default=None)
@click.option("--dump-embeddings", is_flag=True, help="Also write combined embeddings per task.")
@click.option("--set", "overrides", multiple=True)
@_guard
def run(config_path, stream_dir, arms, out_dir, run_id, dump_embeddings, overrides):
    """Run the continual-learning experiment and print a PM/FM table."""
    overrides = list(overrides) + ([f"run.arms={json.dumps(arms)}"] if arms else [])
    cfg = _load(config_path, overrides)
    stream = load_stream(Path(stream_dir))
    results = run_experiment(
        stream,
        cfg.run.arms,
        cfg.model,
        cfg.replay,
        cfg.condense,
        split_seed=cfg.run.seed,
        keep_embeddings=dump_embeddings,
    )
    rid = run_id or cfg.run.run_id or _run_id(cfg, stream)
    root = Path(out_dir or cfg.run.output_dir) / rid
    combined = {"run_id": rid, "config": cfg.to_dict(), "arms": [r.to_dict() for r in results]}
    _write_json(root / "result.json", combined)
    for r in results:
        arm_dir = root / r.arm
        _write_json(arm_dir / "result.json", r.to_dict())
        _write_json(arm_dir / "predictions.json", {"arm": r.arm, "tasks": r.predictions})
        for i, emb in enumerate(r.embeddings, start=1):
            _write_json(arm_dir / f"embeddings_task{i:02d}.json", emb.to_dict())
        for i, art in enumerate(r.history, start=1):
            if art is not None:
                _write_json(arm_dir / f"history_artifacts_task{i:02d}.json", art.to_dict())
    click.echo(summary_table(results))
    click.echo(f"results in {root}")


def _run_id(cfg, stream) -> str:
    payload = json.dumps({"config": cfg.to_dict(), "stream": stream_fingerprint(stream)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


@main.command()
@click.argument("snapshot", type=click.Path())
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--budget", type=int, default=None)
@click.option("--theta", type=float, default=None)
@click.option("--iters", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--set", "overrides", multiple=True)
@_guard
def condense(snapshot, out_path, config_path, budget, theta, iters, seed, overrides):
    """Condense one snapshot file into a small similarity graph."""
    if not Path(snapshot).exists():
        raise MissingInput(f"snapshot file {snapshot} does not exist")
    base = _load(config_path, overrides).condense
    cc = CondenseConfig(
        budget if budget is not None else base.budget,
        theta if theta is not None else base.sim_threshold,
        iters if iters is not None else base.cluster_iters,
        seed if seed is not None else base.seed,
    )
    s = load_snapshot(snapshot)
    g = condense_snapshot(s, cc)
    Path(out_path).write_text(g.dumps())
    labels = s.label_array()
    counts = dict(zip(*np.unique(labels[labels >= 0], return_counts=True)))
    expected = allocate_budget({int(k): int(v) for k, v in counts.items()}, cc.budget or default_budget(s.num_nodes))
    click.echo(f"condensed {s.num_nodes} nodes -> {g.num_nodes} nodes, {len(g.weighted_edges)} edges")
    click.echo(f"label histogram {g.label_histogram()} (allocation {expected})")


@main.command()
@click.option("--seed", type=int, default=0)
@click.option("--instances", type=int, default=20)
@click.option("--inject-fault", type=float, default=0.0, hidden=True, help="Perturb analytic gradients (negative control).")
def gradcheck(seed, instances, inject_fault):
    """Finite-difference check of every differentiable kernel."""
    reports = run_suite(seed, instances, perturb=inject_fault)
    click.echo(f"{'op':<22}{'instances':>10}{'max rel err':>14}  status")
    for r in reports:
        click.echo(f"{r.op:<22}{r.instances:>10}{r.max_rel_error:>14.3e}  {'PASS' if r.passed else 'FAIL'}")
    if not all(r.passed for r in reports):
        sys.exit(EXIT_CHECK_FAILED)


@main.command(name="eval")
@click.argument("predictions", type=click.Path())
@_guard
def eval_cmd(predictions):
    """Recompute PM/FM from a predictions file written by ``run``."""
    path = Path(predictions)
    if not path.exists():
        raise MissingInput(f"predictions file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"not valid JSON ({exc})") from None
    records = []
    for task in data["tasks"]:
        logits = np.array(task["logits"], dtype=np.float64).reshape(len(task["node_ids"]), -1)
        records.append(M.evaluate_task(logits, task["labels"], task["node_ids"], task["node_ids"], task["i"]))
    click.echo(json.dumps(M.summarize(records), indent=2))


if __name__ == "__main__":
    main()
