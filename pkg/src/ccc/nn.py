"""Dense numpy kernels for a two-layer GCN whose weights may be evolved by a matrix GRU.

Forward passes return a cache; :func:`backward` walks it in reverse to give
gradients for every trainable parameter. Only one GRU step is differentiated:
the previous weights entering it are treated as constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import GraphSnapshot

CHECKPOINT_VERSION = 1
GRU_PARTS = ("uz", "vz", "bz", "ur", "vr", "br", "uh", "vh", "bh")


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    """NaN or Inf encountered where finite values are required."""


def check_finite(name: str, a: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {name}")
    return a


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- parameters ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GRUParams:
    """Gate matrices for evolving a (rows x cols) weight matrix.

    ``u*`` act on the previous weights, ``v*`` on the input summary; both are
    rows x rows. Biases ``b*`` have the weight matrix's shape.
    """

    uz: np.ndarray
    vz: np.ndarray
    bz: np.ndarray
    ur: np.ndarray
    vr: np.ndarray
    br: np.ndarray
    uh: np.ndarray
    vh: np.ndarray
    bh: np.ndarray

    @classmethod
    def init(cls, rows: int, cols: int, rng: np.random.Generator) -> "GRUParams":
        sq = lambda: glorot(rows, rows, rng)  # noqa: E731
        zeros = lambda: np.zeros((rows, cols))  # noqa: E731
        return cls(sq(), sq(), zeros(), sq(), sq(), zeros(), sq(), sq(), zeros())

    def as_dict(self) -> dict[str, np.ndarray]:
        return {p: getattr(self, p) for p in GRU_PARTS}


@dataclass(frozen=True, eq=False)
class ModelState:
    """Weights of a two-layer GCN plus a linear classifier head.

    When ``gru`` is set, ``gcn_weights`` hold the current evolved weights and
    only the GRU gates and the classifier are trained; otherwise the GCN
    weights are trained directly.
    """

    gcn_weights: tuple[np.ndarray, ...]
    clf_weight: np.ndarray
    clf_bias: np.ndarray
    gru: tuple[GRUParams, ...] | None = None

    @property
    def evolving(self) -> bool:
        return self.gru is not None

    @property
    def hidden_dim(self) -> int:
        return self.gcn_weights[-1].shape[1]

    def named_params(self) -> dict[str, np.ndarray]:
        out = {f"gcn.{i}": w for i, w in enumerate(self.gcn_weights)}
        if self.gru is not None:
            for i, g in enumerate(self.gru):
                for p, v in g.as_dict().items():
                    out[f"gru.{i}.{p}"] = v
        out["clf.w"] = self.clf_weight
        out["clf.b"] = self.clf_bias
        return out

    def trainable_names(self) -> list[str]:
        names = list(self.named_params())
        if self.evolving:
            names = [n for n in names if not n.startswith("gcn.")]
        return names

    def with_params(self, params: dict[str, np.ndarray]) -> "ModelState":
        cur = self.named_params()
        unknown = set(params) - set(cur)
        if unknown:
            raise KeyError(f"unknown parameter(s) {sorted(unknown)}")
        cur.update(params)
        return state_from_named(cur)

    def shapes(self) -> dict[str, list[int]]:
        return {k: list(v.shape) for k, v in self.named_params().items()}


def state_from_named(params: dict[str, np.ndarray]) -> ModelState:
    n_layers = len([k for k in params if k.startswith("gcn.")])
    gcn = tuple(np.asarray(params[f"gcn.{i}"], dtype=np.float64) for i in range(n_layers))
    gru = None
    if any(k.startswith("gru.") for k in params):
        gru = tuple(
            GRUParams(**{p: np.asarray(params[f"gru.{i}.{p}"], dtype=np.float64) for p in GRU_PARTS})
            for i in range(n_layers)
        )
    return ModelState(
        gcn,
        np.asarray(params["clf.w"], dtype=np.float64),
        np.asarray(params["clf.b"], dtype=np.float64),
        gru,
    )


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_state(
    in_dim: int,
    hidden_dim: int,
    num_classes: int,
    *,
    extra_dim: int = 0,
    evolving: bool = False,
    seed: int = 0,
) -> ModelState:
    """Seeded Glorot-uniform initialisation.

    ``extra_dim`` widens the classifier input for concatenated embeddings.
    """
    rng = np.random.default_rng(seed)
    w1 = glorot(in_dim, hidden_dim, rng)
    w2 = glorot(hidden_dim, hidden_dim, rng)
    clf_w = glorot(hidden_dim + extra_dim, num_classes, rng)
    gru = None
    if evolving:
        gru = (GRUParams.init(*w1.shape, rng), GRUParams.init(*w2.shape, rng))
    return ModelState((w1, w2), clf_w, np.zeros(num_classes), gru)


# -- graph ops ---------------------------------------------------------------


def normalize_adjacency(g: GraphSnapshot | np.ndarray) -> np.ndarray:
    """Symmetric normalisation D^-1/2 (A + I) D^-1/2."""
    a = g.adjacency_matrix() if isinstance(g, GraphSnapshot) else np.asarray(g, dtype=np.float64)
    a_hat = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def _check_shapes(adj: np.ndarray, x: np.ndarray, weights: Sequence[np.ndarray]):
    n = adj.shape[0]
    if adj.shape != (n, n):
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    if x.shape[0] != n:
        raise ShapeError(f"feature rows {x.shape[0]} != adjacency size {n}")
    width = x.shape[1]
    for i, w in enumerate(weights):
        if w.shape[0] != width:
            raise ShapeError(f"layer {i} expects input width {w.shape[0]}, got {width}")
        width = w.shape[1]


@dataclass
class GCNCache:
    adj: np.ndarray
    inputs: list[np.ndarray] = field(default_factory=list)  # embeddings entering each layer
    propagated: list[np.ndarray] = field(default_factory=list)  # adj @ input
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activations


def gcn_forward(adj: np.ndarray, x: np.ndarray, weights: Sequence[np.ndarray], cache: GCNCache | None = None):
    """H = ReLU(A ReLU(A X W1) W2) for the default two layers."""
    _check_shapes(adj, x, weights)
    h = x
    for w in weights:
        ah = adj @ h
        z = ah @ w
        if cache is not None:
            cache.inputs.append(h)
            cache.propagated.append(ah)
            cache.pre.append(z)
        h = relu(z)
    return h


def gcn_backward(cache: GCNCache, weights: Sequence[np.ndarray], d_out: np.ndarray, layer_hook=None):
    """Gradients w.r.t. each layer weight and the input features.

    ``layer_hook(l, dW)`` may return an extra gradient w.r.t. the embedding
    entering layer ``l``; it is called from the last layer backwards.
    """
    grads = [None] * len(weights)
    dh = d_out
    for l in reversed(range(len(weights))):
        dz = dh * (cache.pre[l] > 0)  # subgradient 0 at the kink
        grads[l] = cache.propagated[l].T @ dz
        dh = cache.adj.T @ (dz @ weights[l].T)
        if layer_hook is not None:
            extra = layer_hook(l, grads[l])
            if extra is not None:
                dh = dh + extra
    return grads, dh


# -- matrix GRU --------------------------------------------------------------


@dataclass
class GRUCache:
    prev: np.ndarray
    inp: np.ndarray
    z: np.ndarray
    r: np.ndarray
    cand: np.ndarray


def matrix_gru_step(w_prev: np.ndarray, inp: np.ndarray, p: GRUParams, cache: list | None = None) -> np.ndarray:
    if w_prev.shape != inp.shape:
        raise ShapeError(f"previous weights {w_prev.shape} and input {inp.shape} differ in shape")
    rows = w_prev.shape[0]
    if p.uz.shape != (rows, rows) or p.bz.shape != w_prev.shape:
        raise ShapeError(f"gate shapes {p.uz.shape}/{p.bz.shape} do not fit weights {w_prev.shape}")
    z = sigmoid(p.uz @ w_prev + p.vz @ inp + p.bz)
    r = sigmoid(p.ur @ w_prev + p.vr @ inp + p.br)
    cand = np.tanh(p.uh @ (r * w_prev) + p.vh @ inp + p.bh)
    if cache is not None:
        cache.append(GRUCache(w_prev, inp, z, r, cand))
    return (1.0 - z) * w_prev + z * cand


def matrix_gru_backward(c: GRUCache, p: GRUParams, d_next: np.ndarray):
    """Return (param grads, d_prev, d_inp)."""
    dz = d_next * (c.cand - c.prev)
    d_cand = d_next * c.z
    d_prev = d_next * (1.0 - c.z)

    da_h = d_cand * (1.0 - c.cand**2)
    rp = c.r * c.prev
    d_rp = p.uh.T @ da_h
    dr = d_rp * c.prev
    d_prev += d_rp * c.r
    da_r = dr * c.r * (1.0 - c.r)
    da_z = dz * c.z * (1.0 - c.z)

    d_prev += p.ur.T @ da_r + p.uz.T @ da_z
    d_inp = p.vz.T @ da_z + p.vr.T @ da_r + p.vh.T @ da_h
    grads = GRUParams(
        uz=da_z @ c.prev.T,
        vz=da_z @ c.inp.T,
        bz=da_z,
        ur=da_r @ c.prev.T,
        vr=da_r @ c.inp.T,
        br=da_r,
        uh=da_h @ rp.T,
        vh=da_h @ c.inp.T,
        bh=da_h,
    )
    return grads, d_prev, d_inp


# -- input summary -----------------------------------------------------------


def _column_map(width: int, cols: int) -> np.ndarray:
    return np.arange(cols) % width


def feature_summary_phi(embeddings: np.ndarray, target_shape: tuple[int, int]) -> np.ndarray:
    """Mean-pool node embeddings into one row and tile it down ``target_shape``.

    The pooled row is fitted to the target width by cyclic repetition (or
    truncation when it is wider than the target).
    """
    h = np.asarray(embeddings, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ShapeError("cannot summarise an empty graph")
    rows, cols = target_shape
    mean = h.mean(axis=0)
    row = mean[_column_map(h.shape[1], cols)]
    return np.tile(row, (rows, 1))


def feature_summary_backward(d_summary: np.ndarray, n_nodes: int, width: int) -> np.ndarray:
    d_mean = np.zeros(width)
    np.add.at(d_mean, _column_map(width, d_summary.shape[1]), d_summary.sum(axis=0))
    return np.tile(d_mean / n_nodes, (n_nodes, 1))


# -- loss ----------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels, mask=None) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over masked rows and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, c = logits.shape
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no supervised nodes")
    y = labels[mask].astype(np.int64)
    if np.any(y < 0) or np.any(y >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = logits[mask] - logits[mask].max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(count), y]))
    grad = np.zeros_like(logits, dtype=np.float64)
    probs = softmax(logits[mask])
    probs[np.arange(count), y] -= 1.0
    grad[mask] = probs / count
    return loss, grad


# -- full model ----------------------------------------------------------------


@dataclass
class ForwardCache:
    gcn: GCNCache
    combined: np.ndarray
    gru: list[GRUCache] | None = None
    hidden_dim: int = 0


def evolve_weights(
    state: ModelState, prev_weights: Sequence[np.ndarray], adj: np.ndarray, x: np.ndarray,
    gru_caches: list | None = None, gcn_cache: GCNCache | None = None,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Run one GRU step per layer, summarising the embeddings entering that layer.

    Returns the evolved weights and the final hidden embeddings.
    """
    if state.gru is None:
        raise ValueError("state has no GRU parameters")
    h = x
    new_weights = []
    for l, (w_prev, p) in enumerate(zip(prev_weights, state.gru)):
        summary = feature_summary_phi(h, w_prev.shape)
        w = matrix_gru_step(w_prev, summary, p, gru_caches)
        new_weights.append(w)
        h = gcn_forward(adj, h, [w], gcn_cache)
    return new_weights, h


def model_forward(
    state: ModelState,
    adj: np.ndarray,
    x: np.ndarray,
    extra: np.ndarray | None = None,
    prev_weights: Sequence[np.ndarray] | None = None,
):
    """Logits for every node.

    With ``prev_weights`` the state must be evolving: each layer's weights are
    produced by a GRU step from ``prev_weights`` before being applied. ``extra``
    columns (e.g. historical embeddings) are appended to the hidden output
    before the classifier and are not differentiated.
    Returns (logits, hidden, weights_used, cache).
    """
    gcn_cache = GCNCache(adj)
    gru_caches = None
    if prev_weights is not None:
        gru_caches = []
        weights, h = evolve_weights(state, prev_weights, adj, x, gru_caches, gcn_cache)
    else:
        weights = list(state.gcn_weights)
        h = gcn_forward(adj, x, weights, gcn_cache)
    combined = h if extra is None else np.hstack([h, extra])
    if combined.shape[1] != state.clf_weight.shape[0]:
        raise ShapeError(
            f"classifier expects {state.clf_weight.shape[0]} inputs, got {combined.shape[1]}"
        )
    logits = combined @ state.clf_weight + state.clf_bias
    cache = ForwardCache(gcn_cache, combined, gru_caches, h.shape[1])
    return logits, h, weights, cache


def backward(state: ModelState, cache: ForwardCache, d_logits: np.ndarray, weights: Sequence[np.ndarray]) -> dict[str, np.ndarray]:
    """Reverse-mode gradients for every named parameter of ``state``.

    ``weights`` are the GCN weights actually used in the forward pass. For an
    evolving state the GCN entries are zero (they are recurrent state, not
    trained directly) and gradients reach the GRU gates instead.
    """
    grads: dict[str, np.ndarray] = {}
    grads["clf.w"] = cache.combined.T @ d_logits
    grads["clf.b"] = d_logits.sum(axis=0)
    d_comb = d_logits @ state.clf_weight.T
    d_h = d_comb[:, : cache.hidden_dim]

    if cache.gru is None:
        w_grads, _ = gcn_backward(cache.gcn, weights, d_h)
        for i, g in enumerate(w_grads):
            grads[f"gcn.{i}"] = g
    else:
        n = cache.gcn.adj.shape[0]

        def hook(l, d_w):
            pg, _, d_inp = matrix_gru_backward(cache.gru[l], state.gru[l], d_w)
            for p, v in pg.as_dict().items():
                grads[f"gru.{l}.{p}"] = v
            if l == 0:
                return None  # layer-0 summary depends only on the fixed features
            width = cache.gcn.inputs[l].shape[1]
            return feature_summary_backward(d_inp, n, width)

        gcn_backward(cache.gcn, weights, d_h, layer_hook=hook)
        for i, w in enumerate(state.gcn_weights):
            grads[f"gcn.{i}"] = np.zeros_like(w)
    return {k: grads[k] for k in state.named_params()}


def sgd_step(state: ModelState, grads: dict[str, np.ndarray], lr: float) -> ModelState:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    params = state.named_params()
    updated = {k: params[k] - lr * g for k, g in grads.items()}
    for k, v in updated.items():
        check_finite(k, v)
    return state.with_params(updated)


def predict(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=1)  # first maximum -> lowest class index


# -- checkpoints ---------------------------------------------------------------


def state_to_json(state: ModelState) -> dict:
    params = state.named_params()
    return {
        "version": CHECKPOINT_VERSION,
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "values": {k: v.ravel().tolist() for k, v in params.items()},
    }


def state_from_json(data: dict) -> ModelState:
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    params = {
        k: np.array(data["values"][k], dtype=np.float64).reshape(shape)
        for k, shape in data["shapes"].items()
    }
    return state_from_named(params)


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(state_to_json(state)))


def load_checkpoint(path: str | Path) -> ModelState:
    return state_from_json(json.loads(Path(path).read_text()))


__all__ = [
    "GRUParams",
    "ModelState",
    "NumericError",
    "ShapeError",
    "backward",
    "check_finite",
    "feature_summary_phi",
    "gcn_forward",
    "init_state",
    "matrix_gru_step",
    "model_forward",
    "normalize_adjacency",
    "sgd_step",
    "softmax_xent",
]
