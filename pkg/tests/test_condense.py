import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccc.condense import (
    CondenseConfig,
    CondensedGraph,
    CondenseError,
    aggregate_features,
    allocate_budget,
    build_edges,
    cluster_class,
    condense_sequence,
    condense_snapshot,
    cosine_similarity,
)
from ccc.graph import GraphSnapshot

from conftest import random_snapshot


# -- allocation ---------------------------------------------------------------


def test_allocate_proportional():
    assert allocate_budget({"A": 60, "B": 40}, 10) == {"A": 6, "B": 4}


def test_allocate_single_class():
    assert allocate_budget({"A": 100}, 7) == {"A": 7}


def bound_attainable(counts, budget):
    """Whether some allocation gives every present class >=1 slot and stays within 1/budget of its share.

    Each class's admissible counts form an integer interval, so a valid
    allocation exists iff ``budget`` lies between the interval-sum bounds.
    """
    total = sum(counts.values())
    lo = hi = 0
    for c in counts.values():
        if c == 0:
            continue
        q = Fraction(budget * c, total)
        lo += max(1, math.ceil(q - 1))
        hi += math.floor(q + 1)
    return lo <= budget <= hi


def within_bound(alloc, counts, budget):
    total = sum(counts.values())
    return all(
        abs(Fraction(alloc[k], budget) - Fraction(c, total)) <= Fraction(1, budget)
        for k, c in counts.items()
        if c > 0
    )


def test_allocate_min_one_takes_priority():
    # three classes, three slots: each must get one even though C's share is 2.94
    counts = {"A": 1, "B": 1, "C": 98}
    assert allocate_budget(counts, 3) == {"A": 1, "B": 1, "C": 1}
    assert not bound_attainable(counts, 3)
    assert not bound_attainable({0: 1, 1: 1, 2: 5}, 3)


def test_allocate_ties_go_to_lower_class():
    # quotas 1.5 / 1.5: one remainder slot, lower key wins
    assert allocate_budget({0: 5, 1: 5}, 3) == {0: 2, 1: 1}


def test_allocate_zero_count_class_gets_nothing():
    assert allocate_budget({0: 0, 1: 10, 2: 10}, 4) == {0: 0, 1: 2, 2: 2}


def test_allocate_budget_too_small():
    with pytest.raises(CondenseError, match="budget too small"):
        allocate_budget({0: 5, 1: 5, 2: 5}, 2)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(0, 200), min_size=1, max_size=8).filter(lambda c: sum(c) > 0),
    st.integers(1, 60),
)
def test_allocate_properties(counts, budget):
    hist = dict(enumerate(counts))
    present = [k for k, c in hist.items() if c > 0]
    if budget < len(present):
        with pytest.raises(CondenseError):
            allocate_budget(hist, budget)
        return
    alloc = allocate_budget(hist, budget)
    assert sum(alloc.values()) == budget
    for k, c in hist.items():
        assert alloc[k] == 0 if c == 0 else alloc[k] >= 1
    if bound_attainable(hist, budget):
        assert within_bound(alloc, hist, budget)


def test_bound_oracle_agrees_with_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(150):
        counts = {i: int(rng.integers(0, 12)) for i in range(int(rng.integers(1, 4)))}
        if sum(counts.values()) == 0:
            continue
        m = sum(c > 0 for c in counts.values())
        budget = int(rng.integers(max(m, 1), 9))
        keys = [k for k, c in counts.items() if c > 0]
        exists = any(
            sum(combo) == budget and within_bound(dict(zip(keys, combo)), {k: counts[k] for k in keys}, budget)
            for combo in itertools.product(range(1, budget + 1), repeat=len(keys))
        )
        assert exists == bound_attainable(counts, budget)


# -- clustering ---------------------------------------------------------------


def test_cluster_k_equals_rows():
    x = np.array([[0.0, 1.0], [2.0, 3.0], [5.0, -1.0]])
    res = cluster_class(x, 3, seed=3)
    assert res.objective == 0.0
    assert sorted(map(tuple, res.centroids)) == sorted(map(tuple, x))


def _best_two_partition(points):
    best = None
    n = len(points)
    for mask in range(1, 2 ** (n - 1)):
        a = [p for i, p in enumerate(points) if mask >> i & 1]
        b = [p for i, p in enumerate(points) if not mask >> i & 1]
        cost = sum((p - np.mean(a)) ** 2 for p in a) + sum((p - np.mean(b)) ** 2 for p in b)
        if best is None or cost < best[0]:
            best = (cost, sorted([np.mean(a), np.mean(b)]))
    return best


def test_cluster_two_groups_matches_enumeration():
    pts = [0.0, 0.1, 10.0, 10.1]
    cost, centers = _best_two_partition(pts)
    res = cluster_class(np.array(pts)[:, None], 2, seed=0)
    np.testing.assert_allclose(sorted(res.centroids[:, 0]), centers, atol=1e-12)
    np.testing.assert_allclose(centers, [0.05, 10.05], atol=1e-12)
    assert res.objective == pytest.approx(cost)


def test_cluster_k1_is_mean(rng):
    x = rng.normal(size=(9, 4))
    np.testing.assert_allclose(cluster_class(x, 1).centroids[0], x.mean(axis=0), atol=1e-12)


def test_cluster_too_many():
    with pytest.raises(CondenseError):
        cluster_class(np.zeros((2, 2)), 3)


def test_cluster_handles_duplicates():
    x = np.zeros((5, 2))
    res = cluster_class(x, 3, seed=1)
    assert all(np.bincount(res.assignment, minlength=3) > 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cluster_objective_non_increasing(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    x = rng.normal(size=(n, int(rng.integers(1, 5))))
    k = int(rng.integers(1, n + 1))
    res = cluster_class(x, k, iters=15, seed=seed)
    trace = np.array(res.objective_trace)
    assert np.all(np.diff(trace) <= 1e-9 * max(1.0, trace[0]))
    assert set(res.assignment.tolist()) == set(range(k))  # no empty clusters


def test_cluster_deterministic(rng):
    x = rng.normal(size=(30, 3))
    a, b = cluster_class(x, 4, seed=9), cluster_class(x, 4, seed=9)
    np.testing.assert_array_equal(a.centroids, b.centroids)


# -- similarity / edges -------------------------------------------------------


def test_cosine_examples():
    assert cosine_similarity([3.0, 4.0], [3.0, 4.0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 0], [1, 1]) == pytest.approx(1 / math.sqrt(2), abs=1e-9)
    assert cosine_similarity([0, 0], [1, 1]) == 0.0


def test_build_edges_examples():
    x = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    table = {(i, j): cosine_similarity(x[i], x[j]) for i in range(3) for j in range(i + 1, 3)}
    expected = {p for p, s in table.items() if s >= 0.7}
    assert expected == {(0, 1), (1, 2)}
    assert {(i, j) for i, j, _ in build_edges(x, 0.7)} == expected
    assert len(build_edges(x, -1.0)) == 3
    par = np.array([[1.0, 2.0], [2.0, 4.0], [1.0, 0.0]])
    assert {(i, j) for i, j, _ in build_edges(par, 1.0)} == {(0, 1)}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1, 1))
def test_build_edges_exhaustive(seed, theta):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(int(rng.integers(0, 20)), 3))
    edges = {(i, j): s for i, j, s in build_edges(x, theta)}
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            s = cosine_similarity(x[i], x[j])
            if (i, j) in edges:
                assert s >= theta and edges[(i, j)] == pytest.approx(s)
            else:
                assert s < theta


# -- snapshot condensation ------------------------------------------------------


def _two_class_snapshot(rng, n=100, t=0):
    labels = [0] * 60 + [1] * 40
    ids = list(range(n))
    x = rng.normal(size=(n, 4)) + np.where(np.array(labels)[:, None] == 0, 2.0, -2.0)
    edges = [(i, i + 1) for i in range(n - 1)]
    return GraphSnapshot.create(t, ids, x, labels, edges)


def test_condense_histogram(rng):
    s = _two_class_snapshot(rng)
    g = condense_snapshot(s, CondenseConfig(budget=10))
    assert g.num_nodes == 10
    assert g.label_histogram() == allocate_budget({0: 60, 1: 40}, 10) == {0: 6, 1: 4}
    assert all(w >= 0.5 for *_, w in g.weighted_edges)


def test_condense_provenance_partitions_classes(rng):
    s = _two_class_snapshot(rng)
    g = condense_snapshot(s, CondenseConfig(budget=10))
    for c in (0, 1):
        members = [set(p) for p, y in zip(g.provenance, g.node_labels) if y == c]
        union = set().union(*members)
        assert sum(len(m) for m in members) == len(union)
        assert union == {v for v, y in zip(s.node_ids, s.labels) if y == c}
    for i, p in enumerate(g.provenance):
        np.testing.assert_allclose(g.node_features[i], s.features[[s.index[v] for v in p]].mean(axis=0))


def test_condense_saturated_budget():
    rng = np.random.default_rng(5)
    s = random_snapshot(rng, 12, 0.3)
    g = condense_snapshot(s, CondenseConfig(budget=12, sim_threshold=-1.0, cluster_iters=1))
    assert sorted(p for (p,) in g.provenance) == list(s.node_ids)
    assert len(g.weighted_edges) == 12 * 11 // 2
    for i, (v,) in enumerate(g.provenance):
        np.testing.assert_array_equal(g.node_features[i], s.features[s.index[v]])


def test_condense_deterministic_bytes(rng):
    s = _two_class_snapshot(rng)
    cfg = CondenseConfig(budget=8, seed=4)
    assert condense_snapshot(s, cfg).dumps() == condense_snapshot(s, cfg).dumps()


def test_condense_round_trip_json(rng):
    g = condense_snapshot(_two_class_snapshot(rng), CondenseConfig(budget=8))
    back = CondensedGraph.from_dict(g.to_dict())
    assert back.dumps() == g.dumps()


def test_condense_requires_labels():
    s = GraphSnapshot.create(0, [1, 2], np.ones((2, 2)))
    with pytest.raises(CondenseError, match="nothing to condense"):
        condense_snapshot(s, CondenseConfig(budget=1))


def test_condense_ignores_unlabeled(rng):
    s = _two_class_snapshot(rng)
    labels = list(s.labels)
    labels[:30] = [None] * 30
    g = condense_snapshot(s.with_labels(labels), CondenseConfig(budget=7))
    covered = set().union(*map(set, g.provenance))
    assert covered == set(range(30, 100))


def test_aggregate_features():
    s = GraphSnapshot.create(0, [1, 2, 3], np.array([[1.0], [3.0], [5.0]]), [0, 0, 0], [(1, 2), (2, 3)])
    np.testing.assert_allclose(aggregate_features(s), [[1, 3], [3, 3], [5, 3]])


def test_condense_sequence(rng):
    snaps = [_two_class_snapshot(rng, t=t) for t in range(3)]
    out = condense_sequence(snaps, CondenseConfig(budget=5))
    assert [g.num_nodes for g in out] == [5, 5, 5]
    assert [g.timestep for g in out] == [0, 1, 2]
    assert len(condense_sequence(snaps[:1], CondenseConfig(budget=5))) == 1
    with pytest.raises(CondenseError):
        condense_sequence([], CondenseConfig())


def test_condense_sequence_tags_timestep():
    bad = GraphSnapshot.create(2, [1], np.ones((1, 1)))
    with pytest.raises(CondenseError, match="t=2"):
        condense_sequence([bad], CondenseConfig(budget=1))


def test_node_order_permutation_keeps_histogram(rng):
    s = _two_class_snapshot(rng)
    perm = rng.permutation(s.num_nodes)
    shuffled = GraphSnapshot.create(
        0, [s.node_ids[i] for i in perm], s.features[perm], [s.labels[i] for i in perm], s.edges
    )
    cfg = CondenseConfig(budget=9)
    a, b = condense_snapshot(s, cfg), condense_snapshot(shuffled, cfg)
    assert a.label_histogram() == b.label_histogram()
    assert a.dumps() == b.dumps()


def test_config_validation():
    with pytest.raises(CondenseError):
        CondenseConfig(sim_threshold=1.5)
    with pytest.raises(CondenseError):
        CondenseConfig(budget=0)
