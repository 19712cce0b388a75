"""Silhouette analysis of labelled feature embeddings."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

BANDS = (("weak", 0.25), ("fair", 0.5), ("good", 0.7), ("excellent", np.inf))


class UndefinedMetricError(ValueError):
    """Silhouette needs at least two distinct labels."""


def _check(features, labels):
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"features {X.shape} and labels {y.shape} disagree")
    if X.shape[0] < 2:
        raise UndefinedMetricError("need at least 2 samples")
    if np.unique(y).size < 2:
        raise UndefinedMetricError("silhouette is undefined for a single cluster")
    return X, y


def pairwise_euclidean(X: np.ndarray) -> np.ndarray:
    # difference-based, so coincident points are exactly 0 apart
    return cdist(X, X, metric="euclidean")


def silhouette_samples(features, labels) -> np.ndarray:
    """Per-sample s(i) with Euclidean distance.

    Members of singleton clusters, and samples with a(i) = b(i) = 0, score 0.
    """
    X, y = _check(features, labels)
    D = pairwise_euclidean(X)
    classes, inv = np.unique(y, return_inverse=True)
    onehot = np.eye(classes.size)[inv]                  # N x K
    sums = D @ onehot                                   # distance totals per cluster
    sizes = onehot.sum(axis=0)
    own = sizes[inv]
    a = np.where(own > 1, sums[np.arange(len(y)), inv] / np.maximum(own - 1, 1), 0.0)
    means = sums / sizes
    means[np.arange(len(y)), inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.where(own > 1, s, 0.0)


def silhouette_sample(i: int, features, labels) -> float:
    return float(silhouette_samples(features, labels)[i])


def silhouette_score(features, labels) -> float:
    return float(silhouette_samples(features, labels).mean())


def interpret(score: float) -> str:
    """Quality band: weak < 0.25 <= fair < 0.5 <= good < 0.7 <= excellent."""
    if not -1.0 <= score <= 1.0:
        raise ValueError(f"silhouette score must lie in [-1, 1], got {score}")
    for band, upper in BANDS:
        if score < upper:
            return band
    return "excellent"


@dataclass
class SilhouetteReport:
    score: float
    band: str
    per_class: dict[int, float]
    n_samples: int

    def to_rows(self) -> list[dict]:
        rows = [{"scope": f"class_{c}", "silhouette": repr(float(v)), "band": interpret(v)}
                for c, v in sorted(self.per_class.items())]
        rows.append({"scope": "overall", "silhouette": repr(float(self.score)), "band": self.band})
        return rows

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["scope", "silhouette", "band"])
            w.writeheader()
            w.writerows(self.to_rows())


def subsample(n: int, max_samples: int, seed: int) -> np.ndarray:
    if n <= max_samples:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=max_samples, replace=False))


def analyze(features, labels, max_samples: int = 2000, seed: int = 0) -> tuple[SilhouetteReport, np.ndarray]:
    """Silhouette report on a seeded subsample; also returns the chosen indices."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    idx = subsample(len(y), max_samples, seed)
    s = silhouette_samples(X[idx], y[idx])
    per_class = {int(c): float(s[y[idx] == c].mean()) for c in np.unique(y[idx])}
    score = float(s.mean())
    return SilhouetteReport(score, interpret(score), per_class, len(idx)), idx


def write_features_csv(path, features, labels):
    """Raw features with their labels, one row per sample, for external projection."""
    X = np.asarray(features, dtype=np.float64)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{j}" for j in range(X.shape[1])])
        for lab, row in zip(labels, X):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])
