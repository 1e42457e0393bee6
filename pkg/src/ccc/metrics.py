"""Per-task bookkeeping, Performance Mean and the node-level Forgetting Measure."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class TaskRecord:
    index: int
    correct: frozenset[int]
    errors: frozenset[int]
    accuracy: float

    def __post_init__(self):
        if self.correct & self.errors:
            raise MetricsError("a node cannot be both correct and incorrect")

    @property
    def evaluated(self) -> frozenset[int]:
        return self.correct | self.errors

    @classmethod
    def from_sets(cls, index: int, correct: Iterable[int], errors: Iterable[int]) -> "TaskRecord":
        c, e = frozenset(correct), frozenset(errors)
        total = len(c) + len(e)
        return cls(index, c, e, len(c) / total if total else 0.0)


@dataclass(frozen=True)
class FMResult:
    value: float
    degenerate: bool
    numerator: int
    denominator: int


def evaluate_task(
    logits: np.ndarray,
    labels: Sequence[int | None],
    eval_node_ids: Iterable[int],
    node_ids: Sequence[int],
    index: int = 0,
) -> TaskRecord:
    """Split the evaluation nodes into correctly and incorrectly predicted sets.

    ``logits`` and ``labels`` are aligned with ``node_ids``; argmax ties go to
    the lowest class index.
    """
    eval_ids = sorted(set(eval_node_ids))
    if not eval_ids:
        raise MetricsError("empty evaluation set")
    pos = {v: i for i, v in enumerate(node_ids)}
    correct, wrong = set(), set()
    for v in eval_ids:
        if v not in pos:
            raise MetricsError(f"evaluation node {v} not in graph")
        i = pos[v]
        y = labels[i]
        if y is None:
            raise MetricsError(f"evaluation node {v} is unlabeled")
        (correct if int(np.argmax(logits[i])) == y else wrong).add(v)
    return TaskRecord.from_sets(index, correct, wrong)


def performance_mean(records: Sequence[TaskRecord]) -> float:
    if not records:
        raise MetricsError("performance mean of zero tasks")
    return float(sum(r.accuracy for r in records) / len(records))


def forgetting_detail(prev: TaskRecord, nxt: TaskRecord) -> FMResult:
    # nodes not re-evaluated in the next task no longer exist; drop them
    still_there = prev.correct & nxt.evaluated
    if not still_there:
        return FMResult(0.0, True, 0, 0)
    forgotten = still_there & nxt.errors
    return FMResult(len(forgotten) / len(still_there), False, len(forgotten), len(still_there))


def forgetting_measure(prev: TaskRecord, nxt: TaskRecord) -> float:
    return forgetting_detail(prev, nxt).value


def pairwise_fm(records: Sequence[TaskRecord]) -> list[FMResult]:
    return [forgetting_detail(a, b) for a, b in zip(records, records[1:])]


def aggregate_fm(records: Sequence[TaskRecord]) -> float:
    if len(records) < 2:
        raise MetricsError("forgetting needs at least two tasks")
    pairs = pairwise_fm(records)
    return float(sum(p.value for p in pairs) / len(pairs))


def summarize(records: Sequence[TaskRecord]) -> dict:
    """Results document with per-task rows, pairwise FM, PM and mean FM."""
    pairs = pairwise_fm(records)
    flags = [
        f"degenerate FM for tasks ({records[i].index}, {records[i + 1].index}): no surviving correct nodes"
        for i, p in enumerate(pairs)
        if p.degenerate
    ]
    return {
        "per_task": [
            {"i": r.index, "a_i": r.accuracy, "|C|": len(r.correct), "|E|": len(r.errors)}
            for r in records
        ],
        "pairwise_fm": [p.value for p in pairs],
        "pm": performance_mean(records),
        "fm_mean": aggregate_fm(records) if len(records) >= 2 else None,
        "flags": flags,
    }
