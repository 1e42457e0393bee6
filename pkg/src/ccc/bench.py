"""Synthetic drifting graph streams and the arm-by-arm continual-learning experiment."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .condense import CondenseConfig, CondensedGraph, condense_snapshot, default_budget
from .graph import GraphSnapshot, require_valid
from .history import HistoryArtifacts, HistoryConfig, train_history
from .metrics import TaskRecord, evaluate_task, summarize
from .replay import CombinedEmbeddings, ReplayConfig, combine, match_nodes, replay_region

ARMS = ("ccc", "finetune", "full_replay")
TRAIN_FRACTION = 0.6


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class BenchConfig:
    num_tasks: int = 5
    nodes_per_task: int = 120
    num_classes: int = 3
    feature_dim: int = 16
    p_in: float = 0.08
    p_out: float = 0.01
    churn_rate: float = 0.15
    drift_rate: float = 0.1  # radians per step
    class_sep: float = 3.0  # norm of each class centroid
    feature_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_in", "p_out", "churn_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"bench.{name}", f"must lie in [0, 1], got {v}")
        if self.p_in <= self.p_out:
            raise ConfigError("bench.p_in", f"must exceed p_out ({self.p_in} <= {self.p_out})")
        if self.num_tasks < 2:
            raise ConfigError("bench.num_tasks", f"need at least 2 tasks, got {self.num_tasks}")
        if self.nodes_per_task < self.num_classes:
            raise ConfigError("bench.nodes_per_task", "fewer nodes than classes")
        if self.num_classes < 2:
            raise ConfigError("bench.num_classes", "need at least 2 classes")
        if self.feature_dim < 2:
            raise ConfigError("bench.feature_dim", "need at least 2 feature dimensions")
        if self.feature_noise < 0 or self.class_sep < 0:
            raise ConfigError("bench.feature_noise", "scales must be non-negative")


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 32  # current-model embedding width
    history_dim: int = 32
    history_epochs: int = 100
    history_lr: float = 0.01
    task_epochs: int = 100
    task_lr: float = 0.2
    train_scope: str = "new"  # "new": nodes that arrived with the task; "present": all train nodes
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden_dim", "history_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name}", "must be positive")
        for name in ("history_epochs", "task_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"model.{name}", "must be non-negative")
        for name in ("history_lr", "task_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name}", "must be positive")
        if self.train_scope not in ("new", "present"):
            raise ConfigError("model.train_scope", f"unknown scope {self.train_scope!r}")


# -- stream generation ---------------------------------------------------------


def _centroid_frames(cfg: BenchConfig, rng: np.random.Generator):
    """Per class: a unit centroid direction and an orthogonal rotation direction."""
    base = rng.normal(size=(cfg.num_classes, cfg.feature_dim))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    ortho = rng.normal(size=base.shape)
    ortho -= (ortho * base).sum(axis=1, keepdims=True) * base
    ortho /= np.linalg.norm(ortho, axis=1, keepdims=True)
    return base, ortho


def class_centroids(cfg: BenchConfig, frames, step: int) -> np.ndarray:
    base, ortho = frames
    angle = cfg.drift_rate * step
    return cfg.class_sep * (np.cos(angle) * base + np.sin(angle) * ortho)


def _edge_prob(cfg, yu, yv):
    return cfg.p_in if yu == yv else cfg.p_out


def generate_stream(cfg: BenchConfig) -> list[GraphSnapshot]:
    """Stochastic-block-model start, then per-step node churn, edge rewiring and centroid drift.

    Removed nodes are replaced one-for-one by new nodes carrying the same
    labels, so class proportions are preserved. Existing nodes keep their
    features; new ones are drawn around the drifted centroids.
    """
    rng = np.random.default_rng(cfg.seed)
    frames = _centroid_frames(cfg, rng)
    n = cfg.nodes_per_task
    labels = {i: i % cfg.num_classes for i in range(n)}
    perm = rng.permutation(n)
    labels = {i: labels[int(perm[i])] for i in range(n)}
    cents = class_centroids(cfg, frames, 0)
    feats = {i: cents[labels[i]] + cfg.feature_noise * rng.normal(size=cfg.feature_dim) for i in range(n)}
    edges: set[tuple[int, int]] = set()
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < _edge_prob(cfg, labels[u], labels[v]):
                edges.add((u, v))
    next_id = n

    snaps = [_snapshot(0, labels, feats, edges)]
    for step in range(1, cfg.num_tasks):
        alive = sorted(labels)
        n_churn = int(round(cfg.churn_rate * len(alive)))
        removed = sorted(int(v) for v in rng.choice(alive, size=n_churn, replace=False)) if n_churn else []
        removed_labels = [labels[v] for v in removed]
        for v in removed:
            del labels[v], feats[v]
        edges = {e for e in edges if e[0] in labels and e[1] in labels}

        n_rewire = int(round(cfg.churn_rate * len(edges)))
        if n_rewire:
            ordered = sorted(edges)
            drop = rng.choice(len(ordered), size=n_rewire, replace=False)
            edges -= {ordered[int(i)] for i in drop}

        cents = class_centroids(cfg, frames, step)
        existing = sorted(labels)
        for y in removed_labels:
            v = next_id
            next_id += 1
            labels[v] = y
            feats[v] = cents[y] + cfg.feature_noise * rng.normal(size=cfg.feature_dim)
            for u in existing:
                if rng.random() < _edge_prob(cfg, labels[u], y):
                    edges.add((u, v))
            existing.append(v)

        if n_rewire:
            edges |= _sample_edges(cfg, labels, edges, n_rewire, rng)
        snaps.append(_snapshot(step, labels, feats, edges))
    return [require_valid(s) for s in snaps]


def _sample_edges(cfg, labels, edges, count, rng) -> set[tuple[int, int]]:
    """Draw ``count`` new edges by rejection sampling against block probabilities."""
    ids = sorted(labels)
    if len(ids) < 2:
        return set()
    max_edges = len(ids) * (len(ids) - 1) // 2
    count = min(count, max_edges - len(edges))
    new: set[tuple[int, int]] = set()
    while len(new) < count:
        u, v = (ids[int(i)] for i in rng.choice(len(ids), size=2, replace=False))
        e = (min(u, v), max(u, v))
        if e in edges or e in new:
            continue
        if rng.random() < _edge_prob(cfg, labels[u], labels[v]) / cfg.p_in:
            new.add(e)
    return new


def _snapshot(t, labels, feats, edges) -> GraphSnapshot:
    ids = sorted(labels)
    x = np.array([feats[v] for v in ids])
    return GraphSnapshot.create(t, ids, x, [labels[v] for v in ids], edges)


# -- experiment ----------------------------------------------------------------


@dataclass
class ExperimentResult:
    arm: str
    metrics: dict
    wall_time: float
    config_hash: str
    records: list[TaskRecord] = field(default_factory=list, repr=False)
    embeddings: list[CombinedEmbeddings] = field(default_factory=list, repr=False)
    predictions: list[dict] = field(default_factory=list, repr=False)
    history: list[HistoryArtifacts | None] = field(default_factory=list, repr=False)

    def to_dict(self, include_wall_time: bool = True) -> dict:
        out = {"arm": self.arm, "config_hash": self.config_hash, "metrics": self.metrics}
        if include_wall_time:
            out["wall_time"] = self.wall_time
        return out


def stream_fingerprint(stream: Sequence[GraphSnapshot]) -> str:
    h = hashlib.sha256()
    for s in stream:
        h.update(str((s.timestep, s.node_ids, s.labels, sorted(s.edge_set))).encode())
        h.update(np.ascontiguousarray(s.features).tobytes())
    return h.hexdigest()


def config_hash(stream, arm: str, model_cfg, replay_cfg, condense_cfg) -> str:
    payload = {
        "arm": arm,
        "model": asdict(model_cfg),
        "replay": asdict(replay_cfg),
        "condense": asdict(condense_cfg),
        "stream": stream_fingerprint(stream),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def arm_replay_config(arm: str, base: ReplayConfig) -> ReplayConfig:
    if arm == "ccc":
        return base
    if arm == "finetune":
        return ReplayConfig(base.k_hops, base.match_threshold, False, base.scope)
    if arm == "full_replay":
        return ReplayConfig(base.k_hops, base.match_threshold, base.enabled, "all")
    raise ConfigError("run.arms", f"unknown arm {arm!r} (expected one of {', '.join(ARMS)})")


@dataclass
class _Roles:
    """Train/eval role and arrival task of every node seen so far."""

    task_of: dict[int, int] = field(default_factory=dict)
    train: set[int] = field(default_factory=set)
    held_out: set[int] = field(default_factory=set)

    def admit(self, stream, seed: int) -> None:
        for s in stream:
            fresh = sorted(v for v in s.node_ids if v not in self.task_of)
            order = np.random.default_rng([seed, s.timestep]).permutation(len(fresh))
            n_train = int(round(TRAIN_FRACTION * len(fresh)))
            for rank, i in enumerate(order):
                v = fresh[int(i)]
                self.task_of[v] = s.timestep
                (self.train if rank < n_train else self.held_out).add(v)


def _train_only_labels(s: GraphSnapshot, train: set[int]) -> GraphSnapshot:
    return s.with_labels([y if v in train else None for v, y in zip(s.node_ids, s.labels)])


class _HistoryCache:
    """Condensed snapshots (label-masked to training nodes) shared across tasks."""

    def __init__(self, stream, roles: _Roles, cfg: CondenseConfig):
        self.stream, self.roles, self.cfg = stream, roles, cfg
        self._condensed: dict[int, CondensedGraph] = {}

    def condensed(self, t: int) -> CondensedGraph:
        if t not in self._condensed:
            s = _train_only_labels(self.stream[t], self.roles.train)
            n_labeled = int((s.label_array() >= 0).sum())
            budget = self.cfg.budget if self.cfg.budget is not None else default_budget(s.num_nodes)
            cfg = CondenseConfig(min(budget, n_labeled), self.cfg.sim_threshold, self.cfg.cluster_iters, self.cfg.seed + s.timestep)
            self._condensed[t] = condense_snapshot(s, cfg)
        return self._condensed[t]


def historical_block(
    prev: GraphSnapshot | None,
    curr: GraphSnapshot,
    artifacts: HistoryArtifacts | None,
    cfg: ReplayConfig,
    dim: int,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Historical columns for every node of ``curr`` plus replay mask and matches."""
    if not cfg.enabled or artifacts is None:
        return np.zeros((curr.num_nodes, dim)), np.zeros(curr.num_nodes, dtype=bool), {v: None for v in curr.node_ids}
    region = replay_region(prev, curr, cfg)
    matches = match_nodes(curr, artifacts.condensed_final, cfg.match_threshold)
    placeholder = np.zeros((curr.num_nodes, 0))
    comb = combine(placeholder, artifacts, region, matches, curr.node_ids)
    return comb.matrix, comb.replay_mask, comb.match_map


def _run_arm(stream, arm, model_cfg, replay_cfg, condense_cfg, roles, history_cache, keep_embeddings):
    cfg = arm_replay_config(arm, replay_cfg)
    n_classes = 1 + max(max((y for y in s.labels if y is not None), default=0) for s in stream)
    d = stream[0].feature_dim
    state = nn.init_state(d, model_cfg.hidden_dim, n_classes, extra_dim=model_cfg.history_dim, seed=model_cfg.seed)
    hist_cfg = HistoryConfig(model_cfg.history_dim, model_cfg.history_epochs, model_cfg.history_lr, model_cfg.seed)

    records, task_matrix, embeddings, predictions, history = [], [], [], [], []
    for t, curr in enumerate(stream):
        prev = stream[t - 1] if t > 0 else None
        artifacts = None
        if cfg.enabled and t > 0:
            condensed = [history_cache.condensed(s) for s in range(t)]
            artifacts = train_history(condensed, n_classes, hist_cfg)
        block, mask, matches = historical_block(prev, curr, artifacts, cfg, model_cfg.history_dim)

        adj = nn.normalize_adjacency(curr)
        x = curr.features
        y = curr.label_array()
        if model_cfg.train_scope == "new":
            train_mask = np.array([v in roles.train and roles.task_of[v] == curr.timestep for v in curr.node_ids])
        else:
            train_mask = np.array([v in roles.train for v in curr.node_ids])
        train_mask &= y >= 0
        if train_mask.any():
            for _ in range(model_cfg.task_epochs):
                logits, _, weights, cache = nn.model_forward(state, adj, x, block)
                _, d_logits = nn.softmax_xent(logits, y, train_mask)
                grads = nn.backward(state, cache, d_logits, weights)
                state = nn.sgd_step(state, grads, model_cfg.task_lr)

        logits, h_cur, _, _ = nn.model_forward(state, adj, x, block)
        nn.check_finite("logits", logits)
        eval_ids = [v for v in curr.node_ids if v in roles.held_out and curr.labels[curr.index[v]] is not None]
        records.append(evaluate_task(logits, curr.labels, eval_ids, curr.node_ids, index=t + 1))
        row = {}
        for j in range(t + 1):
            ids_j = [v for v in eval_ids if roles.task_of[v] == stream[j].timestep]
            row[str(j + 1)] = evaluate_task(logits, curr.labels, ids_j, curr.node_ids, j + 1).accuracy if ids_j else None
        task_matrix.append(row)
        predictions.append(
            {
                "i": t + 1,
                "node_ids": [int(v) for v in eval_ids],
                "labels": [curr.labels[curr.index[v]] for v in eval_ids],
                "logits": [logits[curr.index[v]].tolist() for v in eval_ids],
            }
        )
        if keep_embeddings:
            embeddings.append(CombinedEmbeddings(curr.node_ids, np.hstack([h_cur, block]), mask, matches, h_cur.shape[1]))
            history.append(artifacts)

    metrics = summarize(records)
    metrics["task_matrix"] = task_matrix
    return metrics, records, embeddings, predictions, history


def run_experiment(
    stream: Sequence[GraphSnapshot],
    arms: Iterable[str] = ("ccc", "finetune"),
    model_cfg: ModelConfig = ModelConfig(),
    replay_cfg: ReplayConfig = ReplayConfig(),
    condense_cfg: CondenseConfig = CondenseConfig(),
    *,
    split_seed: int = 0,
    keep_embeddings: bool = False,
) -> list[ExperimentResult]:
    """Train sequentially on each snapshot, once per arm, and score every task.

    Arms: ``finetune`` never replays, ``full_replay`` replays to every matched
    node, ``ccc`` replays only inside the k-hop change region.
    """
    if len(stream) < 2:
        raise ConfigError("stream", "need at least two snapshots")
    arms = list(arms)
    for a in arms:
        arm_replay_config(a, replay_cfg)
    roles = _Roles()
    roles.admit(stream, split_seed)
    cache = _HistoryCache(stream, roles, condense_cfg)
    results = []
    for arm in arms:
        start = time.perf_counter()
        metrics, records, embeddings, predictions, history = _run_arm(
            stream, arm, model_cfg, replay_cfg, condense_cfg, roles, cache, keep_embeddings
        )
        results.append(
            ExperimentResult(
                arm,
                metrics,
                time.perf_counter() - start,
                config_hash(stream, arm, model_cfg, replay_cfg, condense_cfg),
                records,
                embeddings,
                predictions,
                history,
            )
        )
    return results
