"""Training-free graph condensation.

Each labeled class gets a share of the node budget proportional to its
frequency; the class's nodes are then clustered and every cluster becomes
one condensed node carrying the centroid of its members' raw features.
Condensed nodes are linked when their cosine similarity clears a threshold.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

import numpy as np

from .graph import GraphSnapshot

log = logging.getLogger(__name__)


class CondenseError(ValueError):
    pass


@dataclass(frozen=True)
class CondenseConfig:
    budget: int | None = None  # None -> default_budget(N)
    sim_threshold: float = 0.5
    cluster_iters: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.budget is not None and self.budget < 1:
            raise CondenseError(f"budget must be positive, got {self.budget}")
        if not -1.0 <= self.sim_threshold <= 1.0:
            raise CondenseError(f"sim_threshold must lie in [-1, 1], got {self.sim_threshold}")
        if self.cluster_iters < 1:
            raise CondenseError(f"cluster_iters must be positive, got {self.cluster_iters}")


def default_budget(num_nodes: int) -> int:
    return max(10, math.ceil(0.1 * num_nodes))


@dataclass(frozen=True, eq=False)
class CondensedGraph:
    node_features: np.ndarray  # n' x d
    node_labels: tuple[int, ...]
    weighted_edges: tuple[tuple[int, int, float], ...]
    provenance: tuple[tuple[int, ...], ...]
    theta: float
    timestep: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.node_labels)

    @property
    def budget(self) -> int:
        return self.num_nodes

    def label_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for y in self.node_labels:
            hist[y] = hist.get(y, 0) + 1
        return dict(sorted(hist.items()))

    def binary_adjacency(self) -> np.ndarray:
        n = self.num_nodes
        a = np.zeros((n, n))
        for i, j, _ in self.weighted_edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def to_dict(self) -> dict:
        return {
            "budget": self.num_nodes,
            "theta": self.theta,
            "timestep": self.timestep,
            "nodes": [
                {
                    "id": i,
                    "x": [float(v) for v in self.node_features[i]],
                    "y": self.node_labels[i],
                    "provenance": list(self.provenance[i]),
                }
                for i in range(self.num_nodes)
            ],
            "edges": [[i, j, float(s)] for i, j, s in self.weighted_edges],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "CondensedGraph":
        nodes = sorted(data["nodes"], key=lambda r: r["id"])
        feats = np.array([r["x"] for r in nodes], dtype=np.float64)
        return cls(
            node_features=feats,
            node_labels=tuple(int(r["y"]) for r in nodes),
            weighted_edges=tuple((int(i), int(j), float(s)) for i, j, s in data["edges"]),
            provenance=tuple(tuple(r["provenance"]) for r in nodes),
            theta=float(data["theta"]),
            timestep=int(data.get("timestep", 0)),
        )


def allocate_budget(label_counts: Mapping[Hashable, int], budget: int) -> dict:
    """Split ``budget`` across classes proportionally to their counts.

    Largest-remainder rounding on exact fractions (ties to the lower class
    key), followed by a repair pass that guarantees each present class at
    least one slot. Classes with a zero count receive nothing.
    """
    if any(c < 0 for c in label_counts.values()):
        raise CondenseError("label counts must be non-negative")
    present = sorted(k for k, c in label_counts.items() if c > 0)
    if budget < len(present) or budget < 1:
        raise CondenseError(f"budget too small: {budget} slots for {len(present)} classes")
    total = sum(label_counts[k] for k in present)
    quota = {k: Fraction(budget * label_counts[k], total) for k in present}
    alloc = {k: math.floor(quota[k]) for k in present}
    leftover = budget - sum(alloc.values())
    by_remainder = sorted(present, key=lambda k: (-(quota[k] - alloc[k]), present.index(k)))
    for k in by_remainder[:leftover]:
        alloc[k] += 1

    for k in present:
        if alloc[k] == 0:
            alloc[k] = 1
            # take the slot back from the most over-served class that can spare one
            donors = [d for d in present if alloc[d] >= 2]
            donor = max(donors, key=lambda d: (alloc[d] - quota[d], -present.index(d)))
            alloc[donor] -= 1

    out = {k: 0 for k in sorted(label_counts)}
    out.update(alloc)
    return out


# -- clustering ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClusterResult:
    centroids: np.ndarray
    assignment: np.ndarray
    objective_trace: tuple[float, ...]

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _objective(x, centroids, assignment) -> float:
    return float(((x - centroids[assignment]) ** 2).sum())


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with chosen centers
            rest = [i for i in range(n) if i not in chosen]
            nxt = rest[0]
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def cluster_class(features, k: int, iters: int = 20, seed: int = 0) -> ClusterResult:
    """Seeded k-means++ initialisation followed by Lloyd iterations.

    An empty cluster is re-seeded with the point farthest from its current
    centroid, which is moved into it before means are recomputed.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if k < 1:
        raise CondenseError(f"cluster count must be positive, got {k}")
    if k > n:
        raise CondenseError(f"cannot form {k} clusters from {n} rows")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    assignment = np.argmin(_sq_dists(x, centroids), axis=1)
    trace = [_objective(x, centroids, assignment)]

    for _ in range(iters):
        assignment = np.argmin(_sq_dists(x, centroids), axis=1)
        for j in range(k):
            if not np.any(assignment == j):
                point_d = ((x - centroids[assignment]) ** 2).sum(axis=1)
                # never steal the last member of another cluster
                sizes = np.bincount(assignment, minlength=k)
                point_d[sizes[assignment] <= 1] = -1.0
                far = int(np.argmax(point_d))
                assignment[far] = j
        new = np.empty_like(centroids)
        for j in range(k):
            new[j] = x[assignment == j].mean(axis=0)
        centroids = new
        trace.append(_objective(x, centroids, assignment))
        if trace[-1] == trace[-2] and len(trace) > 2:
            break
    return ClusterResult(centroids, assignment, tuple(trace))


# -- similarity and edges ----------------------------------------------------


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise CondenseError(f"length mismatch {a.shape} vs {b.shape}")
    na2, nb2 = np.dot(a, a), np.dot(b, b)
    if na2 == 0.0 or nb2 == 0.0:
        log.warning("cosine similarity with a zero-norm vector; defined as 0")
        return 0.0
    # one square root of the product keeps parallel vectors at exactly 1
    return float(np.clip(np.dot(a, b) / np.sqrt(na2 * nb2), -1.0, 1.0))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between rows; zero-norm rows give 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise CondenseError(f"feature width mismatch {a.shape[1]} vs {b.shape[1]}")
    na2 = (a * a).sum(axis=1)
    nb2 = (b * b).sum(axis=1)
    if np.any(na2 == 0) or np.any(nb2 == 0):
        log.warning("zero-norm feature rows present; their similarities are 0")
    denom = np.sqrt(np.outer(na2, nb2))
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(denom > 0, (a @ b.T) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(sims, -1.0, 1.0)


def build_edges(node_features, theta: float) -> tuple[tuple[int, int, float], ...]:
    if not -1.0 <= theta <= 1.0:
        raise CondenseError(f"theta must lie in [-1, 1], got {theta}")
    x = np.asarray(node_features, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        return ()
    sims = cosine_matrix(x, x)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if sims[i, j] >= theta:
                edges.append((i, j, float(sims[i, j])))
    return tuple(edges)


# -- snapshot condensation ---------------------------------------------------


def aggregate_features(s: GraphSnapshot) -> np.ndarray:
    """Each row: own feature concatenated with the mean of its neighbours' features."""
    x = s.features
    a = s.adjacency_matrix()
    deg = a.sum(axis=1, keepdims=True)
    neigh = np.divide(a @ x, deg, out=np.zeros_like(x), where=deg > 0)
    return np.hstack([x, neigh])


def condense_snapshot(s: GraphSnapshot, cfg: CondenseConfig) -> CondensedGraph:
    labels = s.label_array()
    labeled = labels >= 0
    if not labeled.any():
        raise CondenseError(f"nothing to condense: snapshot t={s.timestep} has no labeled nodes")
    budget = cfg.budget if cfg.budget is not None else default_budget(s.num_nodes)
    n_labeled = int(labeled.sum())
    if budget > n_labeled:
        raise CondenseError(f"budget {budget} exceeds the {n_labeled} labeled nodes")

    classes, counts = np.unique(labels[labeled], return_counts=True)
    alloc = allocate_budget({int(c): int(n) for c, n in zip(classes, counts)}, budget)
    agg = aggregate_features(s)
    ids = np.array(s.node_ids)

    feats, ys, prov = [], [], []
    for c in sorted(alloc):
        k = alloc[c]
        if k == 0:
            continue
        rows = np.flatnonzero(labels == c)
        rows = rows[np.argsort(ids[rows], kind="stable")]  # node-order independent
        res = cluster_class(agg[rows], k, cfg.cluster_iters, seed=_class_seed(cfg.seed, c))
        for j in range(k):
            members = rows[res.assignment == j]
            feats.append(s.features[members].mean(axis=0))
            ys.append(c)
            prov.append(tuple(sorted(int(v) for v in ids[members])))

    x = np.array(feats).reshape(len(feats), s.feature_dim)
    return CondensedGraph(
        node_features=x,
        node_labels=tuple(ys),
        weighted_edges=build_edges(x, cfg.sim_threshold),
        provenance=tuple(prov),
        theta=cfg.sim_threshold,
        timestep=s.timestep,
    )


def _class_seed(seed: int, cls: int) -> int:
    return int(np.random.SeedSequence([seed, cls]).generate_state(1)[0])


def condense_sequence(snaps: Sequence[GraphSnapshot], cfg: CondenseConfig) -> list[CondensedGraph]:
    if not snaps:
        raise CondenseError("empty snapshot sequence")
    out = []
    for s in snaps:
        step_cfg = CondenseConfig(cfg.budget, cfg.sim_threshold, cfg.cluster_iters, cfg.seed + s.timestep)
        try:
            out.append(condense_snapshot(s, step_cfg))
        except CondenseError as exc:
            raise CondenseError(f"t={s.timestep}: {exc}") from exc
    return out
