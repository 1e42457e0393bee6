"""Selective concatenation of historical embeddings onto current node embeddings."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import nn
from .condense import CondensedGraph, cosine_matrix
from .graph import GraphError, GraphSnapshot, compute_delta, khop_region
from .history import HistoryArtifacts

SCOPES = ("region", "all")


class ReplayError(ValueError):
    pass


@dataclass(frozen=True)
class ReplayConfig:
    k_hops: int = 2
    match_threshold: float = 0.5
    enabled: bool = True
    scope: str = "region"  # "all" replays to every matched node regardless of change region

    def __post_init__(self):
        if self.k_hops < 0:
            raise ReplayError(f"k_hops must be non-negative, got {self.k_hops}")
        if not -1.0 <= self.match_threshold <= 1.0:
            raise ReplayError(f"match_threshold must lie in [-1, 1], got {self.match_threshold}")
        if self.scope not in SCOPES:
            raise ReplayError(f"scope must be one of {SCOPES}, got {self.scope!r}")


@dataclass(frozen=True, eq=False)
class CombinedEmbeddings:
    node_ids: tuple[int, ...]
    matrix: np.ndarray  # n x (d_n + d_h)
    replay_mask: np.ndarray  # bool per node
    match_map: dict[int, int | None]
    current_dim: int

    @property
    def historical_block(self) -> np.ndarray:
        return self.matrix[:, self.current_dim :]

    @property
    def current_block(self) -> np.ndarray:
        return self.matrix[:, : self.current_dim]

    def to_dict(self) -> dict:
        return {
            "node_ids": list(self.node_ids),
            "current_dim": self.current_dim,
            "historical_dim": self.matrix.shape[1] - self.current_dim,
            "matrix": self.matrix.tolist(),
            "replay_mask": [bool(b) for b in self.replay_mask],
            "match_map": {str(k): v for k, v in self.match_map.items()},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def match_nodes(current: GraphSnapshot, condensed: CondensedGraph, threshold: float) -> dict[int, int | None]:
    """Map each current node to its most similar condensed node, if similar enough.

    Similarity is the cosine of raw features; ties resolve to the lowest
    condensed index.
    """
    if current.num_nodes == 0:
        return {}
    if condensed.num_nodes == 0:
        return {v: None for v in current.node_ids}
    if current.feature_dim != condensed.node_features.shape[1]:
        raise ReplayError(
            f"feature width mismatch: current {current.feature_dim}, condensed {condensed.node_features.shape[1]}"
        )
    sims = cosine_matrix(current.features, condensed.node_features)
    best = np.argmax(sims, axis=1)
    best_sim = sims[np.arange(len(best)), best]
    return {
        v: (int(best[i]) if best_sim[i] >= threshold else None)
        for i, v in enumerate(current.node_ids)
    }


def combine(
    h_current: np.ndarray,
    historical: HistoryArtifacts | np.ndarray,
    region: Iterable[int],
    match_map: dict[int, int | None],
    node_ids: tuple[int, ...],
) -> CombinedEmbeddings:
    """Concatenate matched historical rows for region nodes; zero-pad every other row."""
    h_hist = historical.historical_embeddings if isinstance(historical, HistoryArtifacts) else np.asarray(historical)
    n, d_n = h_current.shape
    if n != len(node_ids):
        raise ReplayError(f"{n} embedding rows for {len(node_ids)} nodes")
    region = set(region)
    pos = {v: i for i, v in enumerate(node_ids)}
    missing = region - pos.keys()
    if missing:
        raise GraphError(f"region node(s) {sorted(missing)[:5]} absent from snapshot")

    block = np.zeros((n, h_hist.shape[1]))
    mask = np.zeros(n, dtype=bool)
    for v in region:
        j = match_map.get(v)
        if j is not None:
            i = pos[v]
            block[i] = h_hist[j]
            mask[i] = True
    full = {v: match_map.get(v) for v in node_ids}
    return CombinedEmbeddings(tuple(node_ids), np.hstack([h_current, block]), mask, full, d_n)


def replay_region(prev: GraphSnapshot | None, curr: GraphSnapshot, cfg: ReplayConfig) -> frozenset[int]:
    """Nodes eligible for replay under the configured scope."""
    if cfg.scope == "all":
        return frozenset(curr.node_ids)
    if prev is None:
        return frozenset()
    delta = compute_delta(prev, curr)
    return khop_region(curr, delta.seed_set, cfg.k_hops)


def selective_replay_step(
    prev: GraphSnapshot | None,
    curr: GraphSnapshot,
    artifacts: HistoryArtifacts | None,
    model: nn.ModelState,
    cfg: ReplayConfig,
) -> CombinedEmbeddings:
    """Delta, change region, current forward pass, matching and concatenation."""
    h_current = nn.gcn_forward(nn.normalize_adjacency(curr), curr.features, model.gcn_weights)
    d_h = model.clf_weight.shape[0] - model.hidden_dim
    if not cfg.enabled or artifacts is None:
        block = np.zeros((curr.num_nodes, d_h))
        return CombinedEmbeddings(
            curr.node_ids,
            np.hstack([h_current, block]),
            np.zeros(curr.num_nodes, dtype=bool),
            {v: None for v in curr.node_ids},
            h_current.shape[1],
        )
    region = replay_region(prev, curr, cfg)
    matches = match_nodes(curr, artifacts.condensed_final, cfg.match_threshold)
    return combine(h_current, artifacts, region, matches, curr.node_ids)
