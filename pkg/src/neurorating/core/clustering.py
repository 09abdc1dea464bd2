"""Clustering users by their fitted neural characteristics."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from sklearn.metrics import silhouette_score

from ..utils.rng import derive_rng
from .errors import ValidationError
from .fitting import FitResult
from .models import DecoderVariant

logger = logging.getLogger(__name__)

DEFAULT_FEATURES = ("gain", "baseline", "width", "mean_model_variance")
MAX_ITERATIONS = 100


@dataclass(frozen=True)
class FeatureVector:
    """Standardized continuous features plus a weighted decoder one-hot block."""

    user_id: str
    continuous: tuple[float, ...]
    decoder: tuple[float, ...]

    @property
    def values(self) -> np.ndarray:
        """Full feature vector."""
        return np.asarray(self.continuous + self.decoder, dtype=float)


@dataclass
class ClusterResult:
    """Partition of users into k clusters."""

    k: int
    assignments: dict[str, int]
    centroids: np.ndarray
    wcss: float
    seed: int
    silhouette: float | None = None
    restart_objectives: list[float] = field(default_factory=list)
    history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        """Convert the quality report to dictionary."""
        return {
            "k": self.k,
            "seed": self.seed,
            "wcss": self.wcss,
            "silhouette": self.silhouette,
            "restart_objectives": list(self.restart_objectives),
            "iterations": len(self.history),
            "cluster_sizes": [
                sum(1 for c in self.assignments.values() if c == j) for j in range(self.k)
            ],
            "centroids": self.centroids.tolist(),
        }


def featurize(
    fits: Sequence[FitResult],
    decoder_weight: float = 1.0,
    features: Sequence[str] = DEFAULT_FEATURES,
) -> list[FeatureVector]:
    """Embed fitted users into a feature space.

    Continuous features are z-scored over the cohort (population sd); columns
    with zero spread map to zeros. The decoder one-hot block is appended
    without scaling, multiplied by ``decoder_weight``.

    Raises:
        ValidationError: If no fits are given or a feature name is unknown.
    """
    if not fits:
        raise ValidationError("Cannot featurize an empty cohort")
    unknown = [name for name in features if not hasattr(fits[0], name)]
    if unknown:
        raise ValidationError(f"Unknown clustering features: {unknown}")
    raw = np.array([[float(getattr(fit, name)) for name in features] for fit in fits])
    mean = raw.mean(axis=0)
    sd = raw.std(axis=0)
    flat = sd <= 1e-12
    scaled = np.where(flat, 0.0, (raw - mean) / np.where(flat, 1.0, sd))
    variants = list(DecoderVariant)
    vectors = []
    for fit, row in zip(fits, scaled, strict=True):
        onehot = tuple(decoder_weight if fit.variant is v else 0.0 for v in variants)
        vectors.append(FeatureVector(fit.user_id, tuple(float(x) for x in row), onehot))
    return vectors


def _initial_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # Distinct rows first, so duplicates only seed when there are fewer than k distinct.
    _, first = np.unique(points, axis=0, return_index=True)
    distinct = rng.permutation(np.sort(first))
    rest = rng.permutation(np.setdiff1d(np.arange(points.shape[0]), distinct))
    return points[np.concatenate([distinct, rest])[:k]].copy()


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)


def _repair_empty(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray, k: int) -> None:
    for j in range(k):
        if np.any(labels == j):
            continue
        own = np.sum((points - centroids[labels]) ** 2, axis=1)
        # keep every donor cluster non-empty
        sizes = np.bincount(labels, minlength=k)
        own[sizes[labels] <= 1] = -1.0
        farthest = int(np.argmax(own))
        logger.debug(f"Reseeding empty cluster {j} at point {farthest}")
        labels[farthest] = j
        centroids[j] = points[farthest]


def _lloyd(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    centroids = _initial_centroids(points, k, rng)
    labels = np.full(points.shape[0], -1)
    history: list[float] = []
    for _ in range(MAX_ITERATIONS):
        new_labels = np.argmin(_squared_distances(points, centroids), axis=1)
        _repair_empty(points, new_labels, centroids, k)
        centroids = np.vstack([points[new_labels == j].mean(axis=0) for j in range(k)])
        history.append(float(np.sum((points - centroids[new_labels]) ** 2)))
        settled = np.array_equal(new_labels, labels)
        labels = new_labels
        if settled:
            break
    return labels, centroids, history


def _canonical(labels: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Number clusters by first appearance.
    order = list(dict.fromkeys(labels.tolist()))
    mapping = {old: new for new, old in enumerate(order)}
    return np.array([mapping[x] for x in labels.tolist()]), centroids[order]


def cluster_users(
    features: Sequence[FeatureVector], k: int, restarts: int = 10, seed: int = 0
) -> ClusterResult:
    """Partition users by Lloyd iterations, keeping the best of several restarts.

    Each restart seeds k distinct users as centroids from its own (seed, restart)
    stream and alternates assignment and mean updates until assignments settle
    or ``MAX_ITERATIONS`` is reached. Users are processed in user-id order, so the
    partition does not depend on input order; the lowest objective wins with
    ties going to the earliest restart.

    Raises:
        ValidationError: If k is not in [1, number of users] or restarts < 1.
    """
    n_users = len(features)
    if k < 1 or k > n_users:
        raise ValidationError(f"k must lie in [1, {n_users}]: {k}")
    if restarts < 1:
        raise ValidationError(f"Restarts must be >= 1: {restarts}")
    ordered = sorted(features, key=lambda f: f.user_id)
    points = np.vstack([f.values for f in ordered])
    best: tuple[np.ndarray, np.ndarray, list[float]] | None = None
    objectives = []
    for restart in range(restarts):
        labels, centroids, history = _lloyd(points, k, derive_rng(seed, restart))
        objectives.append(history[-1])
        if best is None or history[-1] < best[2][-1]:
            best = (labels, centroids, history)
    assert best is not None
    labels, centroids = _canonical(best[0], best[1])
    assignments = {f.user_id: int(c) for f, c in zip(ordered, labels, strict=True)}
    score = silhouette(features, assignments) if 2 <= k < n_users else None
    logger.info(f"Clustered {n_users} users into {k} clusters (wcss={best[2][-1]:.6g})")
    return ClusterResult(
        k=k,
        assignments=assignments,
        centroids=centroids,
        wcss=best[2][-1],
        seed=seed,
        silhouette=score,
        restart_objectives=objectives,
        history=best[2],
    )


def silhouette(features: Sequence[FeatureVector], assignments: dict[str, int]) -> float:
    """Mean silhouette coefficient with Euclidean distance.

    Raises:
        ValidationError: If fewer than two clusters are used or a user is unassigned.
    """
    missing = [f.user_id for f in features if f.user_id not in assignments]
    if missing:
        raise ValidationError(f"Users without a cluster: {missing}")
    labels = np.array([assignments[f.user_id] for f in features])
    n_clusters = np.unique(labels).size
    if n_clusters < 2:
        raise ValidationError("Silhouette needs at least two clusters")
    if n_clusters >= labels.size:
        raise ValidationError("Silhouette needs fewer clusters than users")
    points = np.vstack([f.values for f in features])
    return float(silhouette_score(points, labels, metric="euclidean"))


def silhouette_range(
    features: Sequence[FeatureVector], ks: Sequence[int], restarts: int = 10, seed: int = 0
) -> list[ClusterResult]:
    """Cluster for every k in a range, each result carrying its silhouette."""
    return [cluster_users(features, k, restarts, seed) for k in ks]
