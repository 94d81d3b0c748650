"""Detection metrics (FPR at fixed TPR, AUROC, ID accuracy) and baseline scorers.

Convention: ID is the positive class and higher scores mean more ID-like.
Threshold comparisons use >= on both sides; AUROC is the exact Mann-Whitney
pair statistic with ties counting one half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import DetectorModel, energy, ood_score
from . import nn

BASELINE_KINDS = ("msp", "energy")


@dataclass
class ScoreSet:
    """Scores for the ID test split and one OOD test set."""

    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        self.id_scores = np.asarray(self.id_scores, dtype=np.float64)
        self.ood_scores = np.asarray(self.ood_scores, dtype=np.float64)
        if len(self.id_scores) == 0 or len(self.ood_scores) == 0:
            raise ValueError("score lists must be nonempty")
        if not (np.all(np.isfinite(self.id_scores)) and np.all(np.isfinite(self.ood_scores))):
            raise ValueError("scores must be finite")


@dataclass
class MetricsReport:
    fpr95: float
    auroc: float
    id_acc: float
    n_id: int
    n_ood: int

    def __post_init__(self):
        for name in ("fpr95", "auroc", "id_acc"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")


def fpr_at_tpr(scores: ScoreSet, tpr_target: float = 0.95) -> float:
    """False positive rate at the loosest threshold keeping >= tpr_target of ID.

    The threshold tau is the largest value with fraction(id >= tau) >= target;
    the return value is fraction(ood >= tau).
    """
    if not (0.0 < tpr_target <= 1.0):
        raise ValueError("tpr_target must be in (0, 1]")
    n = len(scores.id_scores)
    # smallest admitted-ID count whose fraction clears the target, under the
    # same float comparison the threshold sweep would use
    k = min(n, max(1, math.ceil(tpr_target * n)))
    while k > 1 and (k - 1) / n >= tpr_target:
        k -= 1
    while k / n < tpr_target:
        k += 1
    tau = np.sort(scores.id_scores)[n - k]
    return float(np.mean(scores.ood_scores >= tau))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average rank of their group."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores: ScoreSet) -> float:
    """P(random ID score > random OOD score), ties counted as one half.

    Computed from tie-averaged ranks; identical to explicit pair counting.
    """
    n_id, n_ood = len(scores.id_scores), len(scores.ood_scores)
    ranks = _average_ranks(np.concatenate([scores.id_scores, scores.ood_scores]))
    u = ranks[:n_id].sum() - n_id * (n_id + 1) / 2.0
    return float(u / (n_id * n_ood))


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction with argmax(logits) == label; argmax ties break to the lowest index."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty test set")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def id_accuracy(model, dataset) -> float:
    """Classification accuracy of any model exposing .logits(rows)."""
    return accuracy_from_logits(model.logits(dataset.rows), dataset.labels)


def baseline_scores(kind: str, model, inputs: np.ndarray) -> np.ndarray:
    """Comparison scorers over backbone logits; higher = more ID-like for both.

    msp: maximum softmax probability. energy: negated energy, i.e.
    logsumexp(logits).
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline {kind!r}, expected one of {BASELINE_KINDS}")
    logits = model.logits(np.atleast_2d(inputs))
    if kind == "msp":
        return nn.softmax(logits).max(axis=1)
    return -np.atleast_1d(energy(logits))


@dataclass
class EvalReport:
    """Per-OOD-set metrics plus the unweighted average row."""

    per_set: dict[str, MetricsReport]
    average_fpr95: float
    average_auroc: float
    id_acc: float
    tpr_target: float = 0.95

    def to_dict(self) -> dict:
        return {
            "per_set": [
                {
                    "name": name,
                    "fpr95": rep.fpr95,
                    "auroc": rep.auroc,
                    "n_id": rep.n_id,
                    "n_ood": rep.n_ood,
                }
                for name, rep in self.per_set.items()
            ],
            "average": {"fpr95": self.average_fpr95, "auroc": self.average_auroc},
            "id_acc": self.id_acc,
            "tpr_target": self.tpr_target,
        }


def report_from_scores(
    id_scores: np.ndarray,
    ood_sets: dict[str, np.ndarray],
    id_acc: float,
    tpr_target: float = 0.95,
) -> EvalReport:
    """Build the per-set + average report from precomputed scores.

    Empty OOD score sets are reported as absent rather than as zero metrics.
    """
    per_set: dict[str, MetricsReport] = {}
    for name, ood in ood_sets.items():
        if len(ood) == 0:
            continue
        s = ScoreSet(id_scores, ood)
        per_set[name] = MetricsReport(
            fpr95=fpr_at_tpr(s, tpr_target),
            auroc=auroc(s),
            id_acc=id_acc,
            n_id=len(id_scores),
            n_ood=len(ood),
        )
    if not per_set:
        raise ValueError("no nonempty OOD sets to evaluate")
    return EvalReport(
        per_set=per_set,
        average_fpr95=float(np.mean([r.fpr95 for r in per_set.values()])),
        average_auroc=float(np.mean([r.auroc for r in per_set.values()])),
        id_acc=id_acc,
        tpr_target=tpr_target,
    )


def evaluate_run(
    detector: DetectorModel,
    id_test,
    ood_tests: dict,
    tpr_target: float = 0.95,
) -> EvalReport:
    """Score the detector on the ID test split against every named OOD set."""
    id_scores = np.atleast_1d(ood_score(detector, id_test.rows))
    ood_scores = {name: np.atleast_1d(ood_score(detector, ds.rows)) for name, ds in ood_tests.items() if len(ds) > 0}
    acc = id_accuracy(detector, id_test)
    return report_from_scores(id_scores, ood_scores, acc, tpr_target)
