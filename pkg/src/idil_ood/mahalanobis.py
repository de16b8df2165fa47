"""Mahalanobis post-processing scorer over penultimate-layer features.

Fits class-conditional Gaussians with a shared (tied) covariance on
in-distribution training features; test points score by the minimum squared
Mahalanobis distance over classes.  Negated distance serves as the confidence
for the standard metric suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GaussianStats:
    class_means: np.ndarray  # (num_labels, d)
    precision: np.ndarray  # (d, d), symmetric positive definite
    shrinkage_eps: float
    feature_dim: int


def default_shrinkage(cov: np.ndarray) -> float:
    """Scale-aware ridge: 1e-6 * trace / d, floored to keep eps*I invertible."""
    d = cov.shape[0]
    eps = 1e-6 * float(np.trace(cov)) / d
    return max(eps, 1e-12)


def fit(features: np.ndarray, labels: list[int], eps: float | None = None) -> GaussianStats:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    n, d = features.shape
    if len(labels) != n:
        raise ValueError("features/labels length mismatch")
    if eps is not None and eps < 0:
        raise ValueError("eps must be non-negative")

    label_ids = sorted(set(labels))
    labels_arr = np.asarray(labels)
    means = np.zeros((len(label_ids), d))
    scatter = np.zeros((d, d))
    for row, lab in enumerate(label_ids):
        members = features[labels_arr == lab]
        if members.shape[0] < 2:
            raise ValueError(f"label {lab} has fewer than 2 samples")
        mu = members.mean(axis=0)
        means[row] = mu
        centered = members - mu
        scatter += centered.T @ centered
    cov = scatter / n
    if eps is None:
        eps = default_shrinkage(cov)
    precision = np.linalg.inv(cov + eps * np.eye(d))
    precision = 0.5 * (precision + precision.T)
    return GaussianStats(
        class_means=means, precision=precision, shrinkage_eps=eps, feature_dim=d
    )


def score(stats: GaussianStats, x: np.ndarray) -> float:
    """Minimum squared Mahalanobis distance over class means (non-negative)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (stats.feature_dim,):
        raise ValueError(
            f"dimension mismatch: expected ({stats.feature_dim},), got {x.shape}"
        )
    diffs = stats.class_means - x
    dists = np.einsum("ij,jk,ik->i", diffs, stats.precision, diffs)
    return float(dists.min())


def score_batch(stats: GaussianStats, xs: np.ndarray) -> list[float]:
    return [score(stats, row) for row in np.atleast_2d(xs)]


def confidences(stats: GaussianStats, xs: np.ndarray) -> list[float]:
    """Negated distances: higher = more in-distribution, ready for the metric suite."""
    return [-s for s in score_batch(stats, xs)]
