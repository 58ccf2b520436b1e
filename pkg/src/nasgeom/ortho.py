"""Quasi-orthogonality statistics of a feature cloud, in degrees."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class OrthoMeasures:
    f_mean: float
    f_std: float
    cmean: float
    cstd: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _unit_rows(X: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    bad = np.flatnonzero(norms <= 0.0)
    if bad.size:
        raise ValueError(f"zero-norm {what}: {bad.tolist()}")
    return X / norms[:, None]


def _angles(cos: np.ndarray) -> np.ndarray:
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def pairwise_angle_stats(X) -> tuple[float, float]:
    """Mean and population std of the angle over all unordered row pairs.

    ``X`` is expected to be centred already.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D cloud with at least 2 rows")
    U = _unit_rows(X, "rows")
    iu = np.triu_indices(U.shape[0], k=1)
    theta = _angles((U @ U.T)[iu])
    return float(theta.mean()), float(theta.std())


def centroid_angle_stats(X, labels) -> tuple[float, float]:
    """Mean and population std of the angle between each row and its class centroid.

    A row is included in its own class centroid. ``X`` is expected to be
    centred over the whole cloud before calling.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (X.shape[0],):
        raise ValueError("labels must align with rows")
    classes, inverse = np.unique(labels, return_inverse=True)
    sums = np.zeros((classes.size, X.shape[1]))
    np.add.at(sums, inverse, X)
    centroids = sums / np.bincount(inverse)[:, None]
    cnorm = np.linalg.norm(centroids, axis=1)
    bad = np.flatnonzero(cnorm <= 1e-12 * max(1.0, float(np.abs(X).max())))
    if bad.size:
        raise ValueError(f"zero-norm class centroid for classes {classes[bad].tolist()}")
    U = _unit_rows(X, "rows")
    theta = _angles(np.sum(U * (centroids / cnorm[:, None])[inverse], axis=1))
    return float(theta.mean()), float(theta.std())


def ortho_measures(X, labels=None) -> OrthoMeasures:
    """All four statistics. Without labels the centroid pair is NaN."""
    f_mean, f_std = pairwise_angle_stats(X)
    if labels is None:
        cmean = cstd = float("nan")
    else:
        cmean, cstd = centroid_angle_stats(X, labels)
    return OrthoMeasures(f_mean, f_std, cmean, cstd)
