"""Decision-boundary bias metrics: per-subgroup accuracy and AUC, disparity
gaps, domain-probe accuracy, and error-set composition.

"Average" is always the unweighted mean over present subgroups (group
average), never the sample average; the worst subgroup is the minimum, with
ties broken by ascending subgroup id for reporting stability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from biaslab.nn import softmax


@dataclass
class SubgroupMetrics:
    per_group: dict[int, float]
    average: float
    worst: float
    worst_group: int
    counts: dict[int, int] = field(default_factory=dict)
    absent: list[int] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "per_group": {str(k): v for k, v in self.per_group.items()},
            "average": self.average,
            "worst": self.worst,
            "worst_group": self.worst_group,
            "counts": {str(k): v for k, v in self.counts.items()},
            "absent": list(self.absent),
        }


def subgroup_accuracy(predictions, labels, groups, num_groups: int | None = None) -> SubgroupMetrics:
    """Accuracy per present subgroup plus the group-averaged mean and the min.

    Empty subgroups (ids < num_groups never seen) are reported absent and
    excluded from both the mean and the min.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if not (len(predictions) == len(labels) == len(groups)):
        raise ValueError("predictions, labels, groups must have equal length")
    if len(labels) == 0:
        raise ValueError("empty inputs")
    if num_groups is None:
        num_groups = int(groups.max()) + 1

    per_group: dict[int, float] = {}
    counts: dict[int, int] = {}
    absent: list[int] = []
    for g in range(num_groups):
        mask = groups == g
        n = int(mask.sum())
        if n == 0:
            absent.append(g)
            continue
        per_group[g] = float((predictions[mask] == labels[mask]).mean())
        counts[g] = n
    values = np.array(list(per_group.values()))
    worst = float(values.min())
    worst_group = min(g for g, v in per_group.items() if v == worst)
    return SubgroupMetrics(
        per_group=per_group,
        average=float(values.mean()),
        worst=worst,
        worst_group=worst_group,
        counts=counts,
        absent=absent,
    )


def _midranks(x: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties receiving the midrank."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=float)
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def mann_whitney_auc(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """P(score_pos > score_neg) with ties counted 0.5 (Mann-Whitney U / n+n-)."""
    pos_scores = np.asarray(pos_scores, dtype=float)
    neg_scores = np.asarray(neg_scores, dtype=float)
    if len(pos_scores) == 0 or len(neg_scores) == 0:
        raise ValueError("both positive and negative scores are required")
    ranks = _midranks(np.concatenate([pos_scores, neg_scores]))
    n_pos = len(pos_scores)
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * len(neg_scores)))


def subgroup_auc(scores, labels, attributes, cls: int, attribute: int,
                 within_attribute: bool = True) -> float | None:
    """One-vs-rest AUC for class ``cls`` within attribute slice ``attribute``.

    ``scores`` is (n, classes); the positive set is class ``cls`` within the
    slice. By default negatives are the slice's other classes, which isolates
    class discrimination from attribute base rates; ``within_attribute=False``
    draws negatives from every attribute instead. Returns None when the slice
    lacks positives or negatives (metric undefined).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    attributes = np.asarray(attributes)
    in_slice = attributes == attribute
    pos = in_slice & (labels == cls)
    if within_attribute:
        neg = in_slice & (labels != cls)
    else:
        neg = labels != cls
    if not pos.any() or not neg.any():
        return None
    s = scores[:, cls]
    return mann_whitney_auc(s[pos], s[neg])


@dataclass
class DisparityReport:
    delta_best_worst: float
    delta_avg_worst: float
    per_class: dict[int, float] = field(default_factory=dict)
    per_class_mean: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "delta_best_worst": self.delta_best_worst,
            "delta_avg_worst": self.delta_avg_worst,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "per_class_mean": self.per_class_mean,
        }


def disparity(per_group: Mapping[int, float],
              class_partition: Mapping[int, Iterable[int]] | None = None) -> DisparityReport:
    """Gap metrics over per-subgroup values: best-worst, average-worst, and
    (given a class -> subgroup-ids partition) the within-class best-worst gap
    per class plus its mean."""
    if not per_group:
        raise ValueError("no subgroup values")
    values = np.array(list(per_group.values()), dtype=float)
    best_worst = float(values.max() - values.min())
    # clamp: fp rounding can put the mean a few ulp outside [min, max]
    avg_worst = min(best_worst, max(0.0, float(values.mean() - values.min())))
    report = DisparityReport(
        delta_best_worst=best_worst,
        delta_avg_worst=avg_worst,
    )
    if class_partition is not None:
        per_class = {}
        for cls, gids in class_partition.items():
            vals = [per_group[g] for g in gids if g in per_group]
            if vals:
                per_class[int(cls)] = float(max(vals) - min(vals))
        report.per_class = per_class
        if per_class:
            report.per_class_mean = float(np.mean(list(per_class.values())))
    return report


def domain_probe_accuracy(stack, ds, indices) -> SubgroupMetrics:
    """Per-subgroup accuracy of the stack's domain head at predicting the
    spurious attribute. Requires a domain head."""
    if getattr(stack, "domain_head", None) is None:
        raise ValueError("model has no domain head")
    indices = np.asarray(indices)
    z = stack.encoder.forward(ds.X[indices])
    logits = stack.domain_head.forward(z)
    preds = logits.argmax(axis=1)
    return subgroup_accuracy(preds, ds.a[indices], ds.g[indices], ds.num_groups)


def error_set_composition(error_set, groups, bias_conflicting_ids) -> dict:
    """Share of each subgroup in an error set plus the bias-conflicting total."""
    error_set = np.asarray(error_set)
    if len(error_set) == 0:
        raise ValueError("empty error set")
    groups = np.asarray(groups)
    g_err = groups[error_set]
    conflict = set(int(g) for g in bias_conflicting_ids)
    per_group = {}
    for g in np.unique(g_err):
        per_group[int(g)] = float((g_err == g).mean())
    conflicting_share = float(sum(v for g, v in per_group.items() if g in conflict))
    return {"per_group": per_group, "bias_conflicting": conflicting_share}


def predict_scores(stack, X: np.ndarray) -> np.ndarray:
    """Class probabilities from a model stack (softmax of task logits)."""
    return softmax(stack.task_head.forward(stack.encoder.forward(X)))
