"""Accuracy and fairness metrics for scored binary classifiers.

Hard decisions use the convention ``predict positive iff score >= threshold``.
The discrimination curve is evaluated on 100 equispaced thresholds covering
the closed interval [0, 1]; with scores confined to [0, 1] the threshold-0
point always predicts everyone positive, so the curve starts at 0 there.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .exceptions import UndefinedMetricError

AUDC_THRESHOLDS = np.linspace(0.0, 1.0, 100)


@dataclass
class ScoredBatch:
    """Positive-class scores with binary labels and group labels."""

    scores: np.ndarray
    labels: np.ndarray
    groups: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.groups = np.asarray(self.groups, dtype=np.int64)
        n = self.scores.shape[0]
        if self.labels.shape[0] != n or self.groups.shape[0] != n:
            raise ValueError("scores, labels and groups must have equal length")
        if self.scores.ndim != 1:
            raise ValueError("scores must be a 1-d vector")
        if np.any(self.scores < 0.0) or np.any(self.scores > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")

    def group_labels(self) -> np.ndarray:
        return np.unique(self.groups)


def auc(batch: ScoredBatch) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Ties get midranks, so exchangeable scores give exactly 0.5.
    """
    pos = batch.labels == 1
    n_pos = int(pos.sum())
    n_neg = batch.labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(batch.scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def group_pairwise_accuracy(batch: ScoredBatch, gi: int, gj: int,
                            threshold: float = 0.5) -> float:
    """Accuracy on {positives of group gi} union {negatives of group gj}."""
    preds = batch.scores >= threshold
    pos_cell = (batch.labels == 1) & (batch.groups == gi)
    neg_cell = (batch.labels == 0) & (batch.groups == gj)
    if not pos_cell.any():
        raise UndefinedMetricError(f"no positive examples in group {gi}")
    if not neg_cell.any():
        raise UndefinedMetricError(f"no negative examples in group {gj}")
    mask = pos_cell | neg_cell
    return float((preds[mask] == batch.labels[mask].astype(bool)).mean())


def gpa(batch: ScoredBatch, threshold: float = 0.5) -> float:
    """Group-dependent pairwise accuracy gap; lower is better.

    For two groups this is |A_{gi>gj} - A_{gj>gi}|; with more groups the
    maximum gap over all unordered group pairs (worst case).
    """
    labels = batch.group_labels()
    if labels.shape[0] < 2:
        raise UndefinedMetricError("GPA needs at least two groups")
    worst = 0.0
    for a in range(labels.shape[0]):
        for b in range(a + 1, labels.shape[0]):
            gi, gj = int(labels[a]), int(labels[b])
            gap = abs(group_pairwise_accuracy(batch, gi, gj, threshold)
                      - group_pairwise_accuracy(batch, gj, gi, threshold))
            worst = max(worst, gap)
    return worst


def y_discrim(batch: ScoredBatch, threshold: float) -> float:
    """Absolute gap in positive-prediction rates between groups at a threshold.

    With more than two groups, the maximum gap over group pairs.
    """
    labels = batch.group_labels()
    if labels.shape[0] < 2:
        raise UndefinedMetricError("discrimination needs at least two groups")
    preds = batch.scores >= threshold
    rates = []
    for g in labels:
        mask = batch.groups == g
        if not mask.any():
            raise UndefinedMetricError(f"group {g} is empty")
        rates.append(preds[mask].mean())
    rates = np.asarray(rates)
    return float(rates.max() - rates.min())


def discrimination_curve(batch: ScoredBatch):
    """(thresholds, y_discrim values) over the 100-point threshold grid."""
    values = np.array([y_discrim(batch, t) for t in AUDC_THRESHOLDS])
    return AUDC_THRESHOLDS.copy(), values


def audc(batch: ScoredBatch) -> float:
    """Area under the discrimination curve, trapezoid rule, in [0, 1]."""
    thresholds, values = discrimination_curve(batch)
    return float(np.trapezoid(values, thresholds))


@dataclass
class ProbeReport:
    """Result of probing representations for sensitive-attribute leakage."""

    kind: str
    accuracy: float
    majority_rate: float
    adrg: float              # |accuracy - majority_rate|
    auc: float | None = None  # probe AUC for binary groups, else None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "accuracy": self.accuracy,
                "majority_rate": self.majority_rate, "adrg": self.adrg,
                "auc": self.auc}


@dataclass
class MetricsReport:
    """Evaluation summary for one model on one dataset.

    AUC/GPA/AUDC are defined for binary labels and are None for multiclass
    targets; plain accuracy is always present. MI quantities are in bits.
    """

    accuracy: float
    auc: float | None
    gpa: float | None
    audc: float | None
    layer_mi_bound: float
    joint_mi: float
    probe: ProbeReport | None = None

    def to_dict(self) -> dict:
        out = {"accuracy": self.accuracy, "auc": self.auc, "gpa": self.gpa,
               "audc": self.audc, "layer_mi_bound": self.layer_mi_bound,
               "joint_mi": self.joint_mi}
        out["probe"] = self.probe.to_dict() if self.probe is not None else None
        return out
