"""Confidence scoring and the OOD evaluation suite.

All metrics treat in-distribution samples as the positive class and assume
higher score = more in-distribution.  Thresholds are enumerated at midpoints
between adjacent distinct pooled scores plus sentinels, which covers every
achievable operating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ScoreSet:
    in_scores: list[float]
    ood_scores: list[float]

    def __post_init__(self):
        self.in_scores = [float(s) for s in self.in_scores]
        self.ood_scores = [float(s) for s in self.ood_scores]
        if not all(np.isfinite(self.in_scores)) or not all(np.isfinite(self.ood_scores)):
            raise ValueError("scores must be finite")

    def require_nonempty(self) -> None:
        if not self.in_scores or not self.ood_scores:
            raise ValueError("both score lists must be non-empty")


@dataclass
class MetricsReport:
    """One evaluation cell; metric values are percentages in [0, 100]."""

    fpr95: float
    err: float
    auroc: float
    aupr: float
    accuracy: float | None = None
    metadata: dict = field(default_factory=dict)


def max_softmax(probs: np.ndarray) -> list[float]:
    probs = np.atleast_2d(np.asarray(probs))
    return [float(v) for v in probs.max(axis=1)]


def _threshold_grid(s: ScoreSet) -> list[float]:
    pooled = sorted(set(s.in_scores) | set(s.ood_scores))
    grid = [pooled[0] - 1.0]
    for a, b in zip(pooled, pooled[1:]):
        grid.append((a + b) / 2.0)
    grid.append(pooled[-1] + 1.0)
    return grid


def _rates(s: ScoreSet, threshold: float) -> tuple[float, float]:
    """(TPR, FPR) when everything strictly above the threshold is called in-dist."""
    tpr = sum(1 for v in s.in_scores if v > threshold) / len(s.in_scores)
    fpr = sum(1 for v in s.ood_scores if v > threshold) / len(s.ood_scores)
    return tpr, fpr


def fpr_at_tpr(s: ScoreSet, tpr_target: float = 0.95) -> float:
    """Minimum false positive rate among thresholds reaching the target TPR."""
    s.require_nonempty()
    best = 1.0
    for threshold in _threshold_grid(s):
        tpr, fpr = _rates(s, threshold)
        if tpr >= tpr_target:
            best = min(best, fpr)
    return best


def detection_error(s: ScoreSet) -> float:
    """Minimum over thresholds of the equal-prior error 0.5*(1-TPR) + 0.5*FPR."""
    s.require_nonempty()
    best = 1.0
    for threshold in _threshold_grid(s):
        tpr, fpr = _rates(s, threshold)
        best = min(best, 0.5 * (1.0 - tpr) + 0.5 * fpr)
    return best


def auroc(s: ScoreSet) -> float:
    """Pairwise win probability with ties half-credited; exact integer count."""
    s.require_nonempty()
    ood_sorted = np.sort(s.ood_scores)
    wins = 0
    ties = 0
    for v in s.in_scores:
        lo = int(np.searchsorted(ood_sorted, v, side="left"))
        hi = int(np.searchsorted(ood_sorted, v, side="right"))
        wins += lo
        ties += hi - lo
    return (2 * wins + ties) / (2 * len(s.in_scores) * len(s.ood_scores))


def aupr(s: ScoreSet) -> float:
    """Average precision; tied positives ranked after tied negatives (pessimistic)."""
    s.require_nonempty()
    # sort by descending score; among ties, negatives (is_pos=0) first
    ranked = sorted(
        [(v, 0) for v in s.ood_scores] + [(v, 1) for v in s.in_scores],
        key=lambda t: (-t[0], t[1]),
    )
    tp = 0
    fp = 0
    total = 0.0
    for _, is_pos in ranked:
        if is_pos:
            tp += 1
            total += tp / (tp + fp)
        else:
            fp += 1
    return total / len(s.in_scores)


def accuracy(probs: np.ndarray, gold_labels: list[int]) -> float:
    """Argmax accuracy; ties broken by the lowest label index."""
    probs = np.atleast_2d(np.asarray(probs))
    if probs.shape[0] != len(gold_labels):
        raise ValueError(
            f"length mismatch: {probs.shape[0]} rows vs {len(gold_labels)} labels"
        )
    predicted = probs.argmax(axis=1)
    return float(np.mean(predicted == np.asarray(gold_labels)))


@dataclass
class PercentileTable:
    """Cumulative percentile curves plus the least in-dist score margin summary."""

    rows: list[tuple[float, float, float]]  # (threshold, %in <= t, %ood <= t)
    min_in_score: float
    ood_mass_at_threshold: float  # fraction of OOD scores >= min in-dist score


def percentile_table(s: ScoreSet, bins: int) -> PercentileTable:
    s.require_nonempty()
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    pooled = s.in_scores + s.ood_scores
    lo, hi = min(pooled), max(pooled)
    thresholds = np.linspace(lo, hi, bins + 1) if hi > lo else np.full(bins + 1, lo)
    rows = []
    for t in thresholds:
        pct_in = 100.0 * sum(1 for v in s.in_scores if v <= t) / len(s.in_scores)
        pct_ood = 100.0 * sum(1 for v in s.ood_scores if v <= t) / len(s.ood_scores)
        rows.append((float(t), pct_in, pct_ood))
    min_in = min(s.in_scores)
    mass = sum(1 for v in s.ood_scores if v >= min_in) / len(s.ood_scores)
    return PercentileTable(rows=rows, min_in_score=min_in, ood_mass_at_threshold=mass)


def evaluate(s: ScoreSet, accuracy_value: float | None = None, **metadata) -> MetricsReport:
    """Full metric suite as percentages."""
    return MetricsReport(
        fpr95=100.0 * fpr_at_tpr(s),
        err=100.0 * detection_error(s),
        auroc=100.0 * auroc(s),
        aupr=100.0 * aupr(s),
        accuracy=None if accuracy_value is None else 100.0 * accuracy_value,
        metadata=metadata,
    )
