"""Train an evolving GCN over condensed snapshots and extract historical embeddings."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .condense import CondensedGraph


class HistoryError(ValueError):
    pass


@dataclass(frozen=True)
class HistoryConfig:
    hidden_dim: int = 32
    epochs: int = 100
    lr: float = 0.01
    seed: int = 0


@dataclass(frozen=True, eq=False)
class HistoryArtifacts:
    final_state: nn.ModelState
    historical_embeddings: np.ndarray
    condensed_final: CondensedGraph
    losses: tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return self.historical_embeddings.shape[1]

    def to_dict(self) -> dict:
        return {
            "checkpoint": nn.state_to_json(self.final_state),
            "embeddings": self.historical_embeddings.tolist(),
            "condensed_final": self.condensed_final.to_dict(),
            "losses": list(self.losses),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HistoryArtifacts":
        return cls(
            nn.state_from_json(data["checkpoint"]),
            np.array(data["embeddings"], dtype=np.float64),
            CondensedGraph.from_dict(data["condensed_final"]),
            tuple(data.get("losses", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def _graph_inputs(g: CondensedGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if g.num_nodes == 0:
        raise HistoryError(f"degenerate condensed graph at t={g.timestep}: no nodes")
    # edges were already gated by the similarity threshold; weights are dropped here
    adj = nn.normalize_adjacency(g.binary_adjacency())
    return adj, g.node_features, np.array(g.node_labels)


def evolve_sequence(state: nn.ModelState, inputs, initial: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Weights after running the GRU recurrence over every graph in order."""
    weights = list(initial)
    for adj, x, _ in inputs:
        weights, _ = nn.evolve_weights(state, weights, adj, x)
    return weights


def train_history(
    condensed: Sequence[CondensedGraph],
    num_classes: int,
    cfg: HistoryConfig = HistoryConfig(),
) -> HistoryArtifacts:
    """Fit GRU gates and classifier by node classification on each condensed graph in turn.

    Every epoch restarts the recurrence from the initial weights and takes one
    gradient step per timestep. Afterwards the recurrence is replayed with the
    final gates to obtain the last weights, and the hidden output on the last
    condensed graph is returned as the historical embedding.
    """
    if not condensed:
        raise HistoryError("empty condensed sequence")
    inputs = [_graph_inputs(g) for g in condensed]
    d = inputs[0][1].shape[1]
    state = nn.init_state(d, cfg.hidden_dim, num_classes, evolving=True, seed=cfg.seed)
    initial = list(state.gcn_weights)

    losses = []
    for _ in range(cfg.epochs):
        weights = initial
        epoch_loss = 0.0
        for adj, x, y in inputs:
            logits, _, new_weights, cache = nn.model_forward(state, adj, x, prev_weights=weights)
            loss, d_logits = nn.softmax_xent(logits, y)
            grads = nn.backward(state, cache, d_logits, new_weights)
            state = nn.sgd_step(state, {k: grads[k] for k in state.trainable_names()}, cfg.lr)
            weights = new_weights
            epoch_loss += loss
        losses.append(nn.check_finite("epoch loss", np.array(epoch_loss / len(inputs))).item())

    final_weights = evolve_sequence(state, inputs, initial)
    final_state = nn.ModelState(tuple(final_weights), state.clf_weight, state.clf_bias, state.gru)
    adj, x, _ = inputs[-1]
    h = nn.check_finite("historical embeddings", nn.gcn_forward(adj, x, final_state.gcn_weights))
    return HistoryArtifacts(final_state, h, condensed[-1], tuple(losses))


def extract_embeddings(art: HistoryArtifacts) -> np.ndarray:
    return art.historical_embeddings


def recompute_embeddings(art: HistoryArtifacts) -> np.ndarray:
    """Forward the final condensed graph through the final weights again."""
    adj, x, _ = _graph_inputs(art.condensed_final)
    return nn.gcn_forward(adj, x, art.final_state.gcn_weights)


def condensed_accuracy(art: HistoryArtifacts) -> float:
    adj, x, y = _graph_inputs(art.condensed_final)
    logits, *_ = nn.model_forward(art.final_state, adj, x)
    return float(np.mean(nn.predict(logits) == y))
