"""Snapshot types, deltas between consecutive snapshots and k-hop change regions."""

from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Edge = tuple[int, int]


class GraphError(ValueError):
    """Raised for structurally invalid graph inputs."""


class SnapshotFormatError(GraphError):
    """A snapshot file is malformed or violates snapshot invariants."""


def _norm_edge(u: int, v: int) -> Edge:
    return (u, v) if u <= v else (v, u)


@dataclass(frozen=True, eq=False)
class GraphSnapshot:
    """One timestep of an undirected, unweighted dynamic graph.

    ``features[i]`` and ``labels[i]`` belong to ``node_ids[i]``. A label of
    ``None`` marks an unlabeled node. Edges are stored as given so that
    :func:`validate_snapshot` can report duplicates; use :meth:`create` to
    build a normalized snapshot from arbitrary pairs.
    """

    timestep: int
    node_ids: tuple[int, ...]
    features: np.ndarray
    labels: tuple[int | None, ...]
    edges: tuple[Edge, ...] = field(default=())

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim == 1 and feats.size == 0:
            feats = feats.reshape(0, 0)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "node_ids", tuple(int(v) for v in self.node_ids))
        object.__setattr__(
            self, "labels", tuple(None if y is None else int(y) for y in self.labels)
        )
        object.__setattr__(self, "edges", tuple((int(u), int(v)) for u, v in self.edges))

    @classmethod
    def create(
        cls,
        timestep: int,
        node_ids: Sequence[int],
        features,
        labels: Sequence[int | None] | None = None,
        edges: Iterable[tuple[int, int]] = (),
    ) -> "GraphSnapshot":
        """Build a snapshot with endpoint-ordered, de-duplicated, sorted edges."""
        if labels is None:
            labels = [None] * len(node_ids)
        uniq = sorted({_norm_edge(int(u), int(v)) for u, v in edges})
        return cls(timestep, tuple(node_ids), features, tuple(labels), tuple(uniq))

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1] if self.features.ndim == 2 else 0

    @cached_property
    def index(self) -> dict[int, int]:
        return {v: i for i, v in enumerate(self.node_ids)}

    @cached_property
    def edge_set(self) -> frozenset[Edge]:
        return frozenset(_norm_edge(u, v) for u, v in self.edges)

    @cached_property
    def adjacency_lists(self) -> dict[int, frozenset[int]]:
        adj: dict[int, set[int]] = {v: set() for v in self.node_ids}
        for u, v in self.edge_set:
            if u == v or u not in adj or v not in adj:
                continue
            adj[u].add(v)
            adj[v].add(u)
        return {v: frozenset(ns) for v, ns in adj.items()}

    def label_array(self) -> np.ndarray:
        """Labels as an int array with -1 for unlabeled nodes."""
        return np.array([-1 if y is None else y for y in self.labels], dtype=np.int64)

    def adjacency_matrix(self) -> np.ndarray:
        n = self.num_nodes
        a = np.zeros((n, n))
        idx = self.index
        for u, v in self.edge_set:
            if u == v or u not in idx or v not in idx:
                continue
            a[idx[u], idx[v]] = 1.0
            a[idx[v], idx[u]] = 1.0
        return a

    def with_labels(self, labels: Sequence[int | None]) -> "GraphSnapshot":
        return GraphSnapshot(self.timestep, self.node_ids, self.features, tuple(labels), self.edges)


@dataclass(frozen=True)
class GraphDelta:
    """Node/edge changes from one snapshot to the next plus the change seed set."""

    added_nodes: frozenset[int]
    removed_nodes: frozenset[int]
    added_edges: frozenset[Edge]
    removed_edges: frozenset[Edge]
    seed_set: frozenset[int]

    def is_empty(self) -> bool:
        return not (
            self.added_nodes or self.removed_nodes or self.added_edges or self.removed_edges
        )

    def to_dict(self) -> dict:
        return {
            "added_nodes": sorted(self.added_nodes),
            "removed_nodes": sorted(self.removed_nodes),
            "added_edges": [list(e) for e in sorted(self.added_edges)],
            "removed_edges": [list(e) for e in sorted(self.removed_edges)],
            "seed_set": sorted(self.seed_set),
        }


def validate_snapshot(s: GraphSnapshot) -> list[str]:
    """Return a list of invariant violations; empty iff the snapshot is valid."""
    problems: list[str] = []
    if s.timestep < 0:
        problems.append(f"negative timestep {s.timestep}")
    n = len(s.node_ids)
    dup_nodes = [v for v, c in Counter(s.node_ids).items() if c > 1]
    if dup_nodes:
        problems.append(f"duplicate node id(s) {sorted(dup_nodes)}")
    feats = s.features
    if n == 0:
        if feats.size != 0:
            problems.append("features present for an empty node list")
    elif feats.ndim != 2:
        problems.append(f"features must be a 2-d matrix, got {feats.ndim}-d")
    elif feats.shape[0] != n:
        problems.append(f"feature row count {feats.shape[0]} != node count {n}")
    elif not np.all(np.isfinite(feats)):
        problems.append("non-finite feature value")
    if len(s.labels) != n:
        problems.append(f"label count {len(s.labels)} != node count {n}")
    bad_labels = [y for y in s.labels if y is not None and y < 0]
    if bad_labels:
        problems.append(f"negative class label(s) {sorted(set(bad_labels))}")

    known = set(s.node_ids)
    counts = Counter(_norm_edge(u, v) for u, v in s.edges)
    for (u, v), c in sorted(counts.items()):
        if c > 1:
            problems.append(f"duplicate edge ({u}, {v})")
    for u, v in s.edges:
        if u == v:
            problems.append(f"self-loop on node {u}")
        for w in (u, v):
            if w not in known:
                problems.append(f"dangling endpoint {w} in edge ({u}, {v})")
    return problems


def require_valid(s: GraphSnapshot) -> GraphSnapshot:
    problems = validate_snapshot(s)
    if problems:
        raise SnapshotFormatError(f"invalid snapshot t={s.timestep}: " + "; ".join(problems))
    return s


def neighbors(g: GraphSnapshot, v: int) -> frozenset[int]:
    try:
        return g.adjacency_lists[v]
    except KeyError:
        raise GraphError(f"unknown node {v}") from None


def compute_delta(prev: GraphSnapshot, curr: GraphSnapshot) -> GraphDelta:
    if prev.timestep + 1 != curr.timestep:
        raise GraphError(
            f"non-consecutive snapshots: t={prev.timestep} followed by t={curr.timestep}"
        )
    prev_nodes, curr_nodes = set(prev.node_ids), set(curr.node_ids)
    added_nodes = curr_nodes - prev_nodes
    removed_nodes = prev_nodes - curr_nodes
    added_edges = curr.edge_set - prev.edge_set
    removed_edges = prev.edge_set - curr.edge_set

    seeds = set(added_nodes)
    for u, v in added_edges | removed_edges:
        seeds.update(w for w in (u, v) if w in curr_nodes)
    prev_adj = prev.adjacency_lists
    for v in removed_nodes:
        seeds.update(u for u in prev_adj[v] if u in curr_nodes)

    return GraphDelta(
        frozenset(added_nodes),
        frozenset(removed_nodes),
        frozenset(added_edges),
        frozenset(removed_edges),
        frozenset(seeds),
    )


def apply_delta(
    nodes: Iterable[int], edges: Iterable[Edge], delta: GraphDelta
) -> tuple[set[int], set[Edge]]:
    """Replay a delta onto node and edge sets."""
    node_set = (set(nodes) - delta.removed_nodes) | delta.added_nodes
    edge_set = ({_norm_edge(u, v) for u, v in edges} - delta.removed_edges) | delta.added_edges
    return node_set, edge_set


def khop_region(g: GraphSnapshot, seeds: Iterable[int], k: int) -> frozenset[int]:
    """Nodes within ``k`` hops of any seed, by multi-source breadth-first search."""
    if k < 0:
        raise GraphError(f"k must be non-negative, got {k}")
    adj = g.adjacency_lists
    dist: dict[int, int] = {}
    frontier: deque[int] = deque()
    for v in seeds:
        if v not in adj:
            raise GraphError(f"unknown seed node {v}")
        if v not in dist:
            dist[v] = 0
            frontier.append(v)
    while frontier:
        u = frontier.popleft()
        d = dist[u]
        if d == k:
            continue
        for w in adj[u]:
            if w not in dist:
                dist[w] = d + 1
                frontier.append(w)
    return frozenset(dist)


# -- snapshot files ----------------------------------------------------------


def snapshot_filename(t: int) -> str:
    return f"snapshot_{t:04d}.json"


def snapshot_to_dict(s: GraphSnapshot) -> dict:
    return {
        "timestep": s.timestep,
        "nodes": [
            {"id": v, "x": [float(x) for x in s.features[i]], "y": s.labels[i]}
            for i, v in enumerate(s.node_ids)
        ],
        "edges": [list(_norm_edge(u, v)) for u, v in s.edges],
    }


def snapshot_from_dict(data) -> GraphSnapshot:
    """Parse the JSON snapshot schema, rejecting any invariant violation."""
    if not isinstance(data, dict):
        raise SnapshotFormatError("snapshot must be a JSON object")
    missing = {"timestep", "nodes", "edges"} - set(data)
    if missing:
        raise SnapshotFormatError(f"snapshot missing field(s) {sorted(missing)}")
    t = data["timestep"]
    if not isinstance(t, int) or isinstance(t, bool):
        raise SnapshotFormatError("timestep must be an integer")
    ids, rows, labels = [], [], []
    for rec in data["nodes"]:
        try:
            ids.append(int(rec["id"]))
            rows.append([float(x) for x in rec["x"]])
            y = rec.get("y")
            labels.append(None if y is None else int(y))
        except (KeyError, TypeError, ValueError) as exc:
            raise SnapshotFormatError(f"malformed node record {rec!r}: {exc}") from None
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise SnapshotFormatError(f"ragged feature rows (widths {sorted(widths)})")
    problems = []
    edges = []
    for pair in data["edges"]:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise SnapshotFormatError(f"malformed edge {pair!r}")
        u, v = int(pair[0]), int(pair[1])
        if u > v:
            problems.append(f"edge ({u}, {v}) not stored as id_low < id_high")
        edges.append((u, v))
    width = widths.pop() if widths else 0
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    snap = GraphSnapshot(t, tuple(ids), feats, tuple(labels), tuple(edges))
    problems.extend(validate_snapshot(snap))
    if problems:
        raise SnapshotFormatError(f"invalid snapshot t={t}: " + "; ".join(problems))
    return snap


def save_snapshot(s: GraphSnapshot, directory: str | Path) -> Path:
    path = Path(directory) / snapshot_filename(s.timestep)
    path.write_text(json.dumps(snapshot_to_dict(s)))
    return path


def load_snapshot(path: str | Path) -> GraphSnapshot:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SnapshotFormatError(f"{path}: not valid JSON ({exc})") from None
    return snapshot_from_dict(data)
