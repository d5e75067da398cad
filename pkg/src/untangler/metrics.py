"""Evaluation metrics for concern partitions.

Predicted groups carry arbitrary ids, so scoring first finds the
best one-to-one assignment of groups to ground-truth concerns (a
maximum-weight bipartite matching over the contingency table) and then
counts the changed statements whose matched label is their true label.

Two accuracies are reported per commit: accuracy over changed
statements only, and absolute accuracy where every untouched statement
counts as trivially correct. Corpus aggregation is statement-weighted
overall accuracy plus the mean of the per-concern-count bucket means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from untangler.errors import UntanglerError


class EmptyGroundTruth(UntanglerError):
    """A commit with no changed statements cannot be scored."""


class NoEligibleCommits(UntanglerError):
    """Bucketed averaging found no commits in any bucket."""


def optimal_label_matching(
    predicted: Mapping[str, int], truth: Mapping[str, int]
) -> tuple[dict[int, int], int]:
    """Best one-to-one mapping of predicted groups onto true concerns.

    Returns (mapping, correct): ``mapping`` sends a predicted group id
    to the concern label it was assigned, ``correct`` is the number of
    statements whose group maps onto their true concern. Ties between
    equally good assignments break deterministically toward the
    lexicographically smallest (group, label) pairing.
    """
    if not truth:
        raise EmptyGroundTruth("ground truth labels are empty")
    group_ids = sorted({predicted[k] for k in predicted})
    label_ids = sorted(set(truth.values()))
    if not group_ids:
        return {}, 0
    counts = np.zeros((len(group_ids), len(label_ids)), dtype=float)
    group_index = {g: i for i, g in enumerate(group_ids)}
    label_index = {lab: j for j, lab in enumerate(label_ids)}
    for key, label in truth.items():
        group = predicted.get(key)
        if group is None:
            continue
        counts[group_index[group], label_index[label]] += 1.0
    # epsilon bonus: strictly below any unit of real weight, decreasing
    # in (row, column) so equal-weight assignments resolve the same way
    # on every run
    cells = counts.size
    eps = 1.0 / (4.0 * cells * cells + 4.0)
    bonus = np.array(
        [[(cells - (i * len(label_ids) + j)) * eps for j in range(len(label_ids))] for i in range(len(group_ids))]
    )
    rows, cols = linear_sum_assignment(counts + bonus, maximize=True)
    mapping = {group_ids[r]: label_ids[c] for r, c in zip(rows, cols)}
    correct = int(sum(counts[r, c] for r, c in zip(rows, cols)))
    return mapping, correct


def count_correct(predicted: Mapping[str, int], truth: Mapping[str, int]) -> int:
    _, correct = optimal_label_matching(predicted, truth)
    return correct


def acc_changed(predicted: Mapping[str, int], truth: Mapping[str, int]) -> float:
    """Fraction of changed statements placed into the right concern."""
    return count_correct(predicted, truth) / len(truth)


def acc_absolute(
    predicted: Mapping[str, int], truth: Mapping[str, int], total_statements: int
) -> float:
    """Accuracy over all statements; unchanged ones count as correct."""
    changed = len(truth)
    if total_statements < changed:
        raise ValueError(
            f"total_statements ({total_statements}) below changed count ({changed})"
        )
    unchanged = total_statements - changed
    return (unchanged + count_correct(predicted, truth)) / total_statements


@dataclass(frozen=True)
class CommitScore:
    """Per-commit scoring record; accuracies derive from raw counts."""

    commit_id: str
    n_concerns: int
    changed: int
    total: int
    correct: int

    @property
    def acc_c(self) -> float:
        return self.correct / self.changed

    @property
    def acc_a(self) -> float:
        return (self.total - self.changed + self.correct) / self.total

    def document(self) -> dict:
        return {
            "commit_id": self.commit_id,
            "n_concerns": self.n_concerns,
            "changed": self.changed,
            "total": self.total,
            "correct": self.correct,
            "acc_changed": self.acc_c,
            "acc_absolute": self.acc_a,
        }


def score_commit(
    commit_id: str,
    predicted: Mapping[str, int],
    truth: Mapping[str, int],
    total_statements: int,
    n_concerns: int,
) -> CommitScore:
    if not truth:
        raise EmptyGroundTruth(f"{commit_id}: no changed statements to score")
    if total_statements < len(truth):
        raise ValueError(f"{commit_id}: total_statements below changed count")
    return CommitScore(
        commit_id=commit_id,
        n_concerns=n_concerns,
        changed=len(truth),
        total=total_statements,
        correct=count_correct(predicted, truth),
    )


def aggregate(scores: Sequence[CommitScore], bucket_concerns: Iterable[int] = (2, 3)) -> dict:
    """Corpus-level summary of per-commit scores.

    ``overall_accuracy`` is statement-weighted: total correct over
    total changed. ``average_accuracy`` is the mean of the per-bucket
    means of acc_changed, one bucket per concern count in
    ``bucket_concerns``; empty buckets are dropped, and having no
    non-empty bucket at all raises NoEligibleCommits.
    """
    scores = list(scores)
    total_changed = sum(s.changed for s in scores)
    total_correct = sum(s.correct for s in scores)
    buckets: dict[int, list[float]] = {}
    for s in scores:
        if s.n_concerns in set(bucket_concerns):
            buckets.setdefault(s.n_concerns, []).append(s.acc_c)
    bucket_means = {k: sum(v) / len(v) for k, v in sorted(buckets.items()) if v}
    if not bucket_means:
        raise NoEligibleCommits(
            f"no commits with concern counts in {sorted(set(bucket_concerns))}"
        )
    return {
        "commits": len(scores),
        "overall_accuracy": (total_correct / total_changed) if total_changed else 0.0,
        "average_accuracy": sum(bucket_means.values()) / len(bucket_means),
        "bucket_means": {str(k): v for k, v in bucket_means.items()},
        "total_changed": total_changed,
        "total_correct": total_correct,
    }
