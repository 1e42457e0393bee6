"""Central finite-difference checks for every differentiable kernel in :mod:`ccc.nn`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn

STEP = 1e-4
TOLERANCE = 1e-4
KINK_MARGIN = 1e-2


@dataclass(frozen=True)
class OpReport:
    op: str
    instances: int
    max_rel_error: float
    passed: bool


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), with a 1e-8 floor on the denominator."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(diff / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def _random_graph(rng, n, p=0.4):
    a = (rng.random((n, n)) < p).astype(float)
    a = np.triu(a, 1)
    return a + a.T


def _clear_of_kinks(pre: list[np.ndarray]) -> bool:
    return all(np.min(np.abs(z)) > KINK_MARGIN for z in pre)


# -- per-op checks -------------------------------------------------------------


def check_softmax_xent(rng, perturb=0.0) -> float:
    n, c = rng.integers(3, 7), rng.integers(2, 5)
    logits = rng.normal(size=(n, c))
    labels = rng.integers(0, c, size=n)
    mask = rng.random(n) < 0.7
    mask[0] = True
    _, g = nn.softmax_xent(logits, labels, mask)
    num = numeric_grad(lambda: nn.softmax_xent(logits, labels, mask)[0], logits)
    return rel_error(g + perturb, num)


def check_gru(rng, perturb=0.0) -> float:
    rows, cols = rng.integers(2, 5), rng.integers(2, 5)
    p = nn.GRUParams(**{k: rng.normal(scale=0.5, size=(rows, rows) if k[0] in "uv" else (rows, cols)) for k in nn.GRU_PARTS})
    prev = rng.normal(size=(rows, cols))
    inp = rng.normal(size=(rows, cols))
    proj = rng.normal(size=(rows, cols))  # random linear functional of the output

    def f():
        return float((nn.matrix_gru_step(prev, inp, p) * proj).sum())

    cache = []
    nn.matrix_gru_step(prev, inp, p, cache)
    grads, d_prev, d_inp = nn.matrix_gru_backward(cache[0], p, proj)
    err = max(rel_error(d_prev + perturb, numeric_grad(f, prev)), rel_error(d_inp, numeric_grad(f, inp)))
    for k in nn.GRU_PARTS:
        err = max(err, rel_error(getattr(grads, k), numeric_grad(f, getattr(p, k))))
    return err


def check_summary(rng, perturb=0.0) -> float:
    n, width = rng.integers(1, 6), rng.integers(1, 5)
    shape = (int(rng.integers(1, 5)), int(rng.integers(1, 7)))
    h = rng.normal(size=(n, width))
    proj = rng.normal(size=shape)

    def f():
        return float((nn.feature_summary_phi(h, shape) * proj).sum())

    g = nn.feature_summary_backward(proj, n, width)
    return rel_error(g + perturb, numeric_grad(f, h))


def _gcn_instance(rng):
    while True:
        n, d, hdim = rng.integers(3, 7), rng.integers(2, 5), rng.integers(2, 5)
        adj = nn.normalize_adjacency(_random_graph(rng, n))
        x = rng.normal(size=(n, d))
        ws = [rng.normal(size=(d, hdim)), rng.normal(size=(hdim, hdim))]
        cache = nn.GCNCache(adj)
        nn.gcn_forward(adj, x, ws, cache)
        if _clear_of_kinks(cache.pre):
            return adj, x, ws


def check_gcn(rng, perturb=0.0) -> float:
    adj, x, ws = _gcn_instance(rng)
    proj = rng.normal(size=(x.shape[0], ws[-1].shape[1]))

    def f():
        return float((nn.gcn_forward(adj, x, ws) * proj).sum())

    cache = nn.GCNCache(adj)
    nn.gcn_forward(adj, x, ws, cache)
    grads, dx = nn.gcn_backward(cache, ws, proj)
    err = rel_error(dx + perturb, numeric_grad(f, x))
    for w, g in zip(ws, grads):
        err = max(err, rel_error(g, numeric_grad(f, w)))
    return err


def _model_check(rng, evolving: bool, perturb: float) -> float:
    while True:
        n, d, hdim, c = rng.integers(5, 6), rng.integers(2, 5), rng.integers(2, 5), rng.integers(2, 4)
        extra_dim = int(rng.integers(0, 3))
        state = nn.init_state(d, hdim, c, extra_dim=extra_dim, evolving=evolving, seed=int(rng.integers(1 << 30)))
        if evolving:
            params = {k: v + rng.normal(scale=0.3, size=v.shape) for k, v in state.named_params().items()}
            state = nn.state_from_named(params)
        adj = nn.normalize_adjacency(_random_graph(rng, n))
        x = rng.normal(size=(n, d))
        extra = rng.normal(size=(n, extra_dim)) if extra_dim else None
        labels = rng.integers(0, c, size=n)
        prev = [rng.normal(size=w.shape) for w in state.gcn_weights] if evolving else None
        _, _, weights, cache = nn.model_forward(state, adj, x, extra, prev)
        if _clear_of_kinks(cache.gcn.pre):
            break

    params = state.named_params()

    def f():
        st = nn.state_from_named(params)
        logits, *_ = nn.model_forward(st, adj, x, extra, prev)
        return nn.softmax_xent(logits, labels)[0]

    logits, _, weights, cache = nn.model_forward(state, adj, x, extra, prev)
    _, d_logits = nn.softmax_xent(logits, labels)
    grads = nn.backward(state, cache, d_logits, weights)
    err = 0.0
    for name in state.trainable_names():
        err = max(err, rel_error(grads[name] + perturb, numeric_grad(f, params[name])))
    return err


def check_model_static(rng, perturb=0.0) -> float:
    return _model_check(rng, False, perturb)


def check_model_evolving(rng, perturb=0.0) -> float:
    return _model_check(rng, True, perturb)


CHECKS: dict[str, Callable] = {
    "softmax_xent": check_softmax_xent,
    "matrix_gru_step": check_gru,
    "feature_summary_phi": check_summary,
    "gcn_forward": check_gcn,
    "backward[static]": check_model_static,
    "backward[evolving]": check_model_evolving,
}


def run_suite(seed: int = 0, instances: int = 20, tol: float = TOLERANCE, perturb: float = 0.0) -> list[OpReport]:
    """Run every check on ``instances`` seeded random cases.

    ``perturb`` adds a constant to one analytic gradient per check; it exists
    so callers can confirm that a wrong gradient is caught.
    """
    reports = []
    for i, (name, check) in enumerate(CHECKS.items()):
        rng = np.random.default_rng([seed, i])
        worst = max(check(rng, perturb) for _ in range(instances))
        reports.append(OpReport(name, instances, worst, worst <= tol))
    return reports
