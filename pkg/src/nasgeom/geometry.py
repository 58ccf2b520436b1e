"""Geometric kernels shared by the orthogonality and dimension measures.

Everything here is brute force and exact: the clouds we deal with have at most
a few thousand rows, so an O(N^2) distance matrix is cheap and keeps neighbour
tables deterministic (ties go to the lower index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {X.shape}")
    return X


def center(X) -> np.ndarray:
    """Subtract the column means."""
    X = _as_matrix(X)
    if X.shape[0] < 2:
        raise ValueError("centering needs at least 2 rows")
    return X - X.mean(axis=0)


def pairwise_distances(X) -> np.ndarray:
    """Exact Euclidean distance matrix.

    Distances come from explicit coordinate differences (``scipy`` ``pdist``)
    rather than the Gram-matrix shortcut, so the matrix is exactly symmetric
    with a zero diagonal and nearby points do not suffer cancellation.
    """
    X = _as_matrix(X)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 points")
    return squareform(pdist(X, "euclidean"))


@dataclass(frozen=True)
class NeighborTable:
    """k nearest neighbours of every point, self excluded, ascending distance."""

    indices: np.ndarray
    distances: np.ndarray
    duplicates: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def __len__(self) -> int:
        return self.indices.shape[0]


def _refine(X: np.ndarray, cand: np.ndarray) -> np.ndarray:
    """Distances to candidate neighbours, summed dimension by dimension left to right."""
    acc = np.zeros(cand.shape)
    for c in range(X.shape[1]):
        diff = X[:, c, None] - X[cand, c]
        acc += diff * diff
    return np.sqrt(acc)


def knn(X, k: int, distances: np.ndarray | None = None) -> NeighborTable:
    """Brute-force k-nearest-neighbour table.

    ``distances`` may be passed to reuse a precomputed matrix. When ``X`` is
    given, the reported distances are recomputed as plain left-to-right sums
    so they do not depend on how the matrix was accumulated. Points that have
    an exact duplicate elsewhere in the cloud are listed in ``duplicates``.
    """
    D = pairwise_distances(X) if distances is None else np.asarray(distances, dtype=np.float64)
    n = D.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points")
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < N (k={k}, N={n})")
    masked = D.copy()
    np.fill_diagonal(masked, np.inf)
    if X is None:
        # stable sort keeps the lower index first among equal distances
        order = np.argsort(masked, axis=1, kind="stable")[:, :k]
        dist = np.take_along_axis(masked, order, axis=1)
    else:
        # a few spare candidates absorb last-bit reorderings at the cut-off
        cand = np.argsort(masked, axis=1, kind="stable")[:, : min(n - 1, k + 8)]
        exact = _refine(_as_matrix(X), cand)
        pick = np.lexsort((cand, exact), axis=-1)[:, :k]
        order = np.take_along_axis(cand, pick, axis=1)
        dist = np.take_along_axis(exact, pick, axis=1)
    dup = np.flatnonzero(dist[:, 0] == 0.0)
    return NeighborTable(indices=order, distances=dist, duplicates=dup)


@dataclass(frozen=True)
class PcaModel:
    """Principal axes of a cloud.

    ``components`` holds one unit direction per column, ordered by decreasing
    eigenvalue; ``n_retained`` is the variance-threshold cut.
    """

    components: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray
    n_retained: int

    @property
    def total_variance(self) -> float:
        return float(self.eigenvalues.sum())

    def transform(self, X, n: int | None = None) -> np.ndarray:
        n = self.n_retained if n is None else n
        return (_as_matrix(X) - self.mean) @ self.components[:, :n]

    def inverse_transform(self, Z) -> np.ndarray:
        Z = _as_matrix(Z)
        return Z @ self.components[:, : Z.shape[1]].T + self.mean


def pca(X, variance_threshold: float = 0.99, condition_number: float | None = None) -> PcaModel:
    """Eigendecomposition of the sample covariance.

    Keeps the smallest number of leading components whose cumulative explained
    variance reaches ``variance_threshold``; with ``condition_number`` set, keeps
    instead every component whose eigenvalue exceeds ``largest / condition_number``.
    Eigenvalues are clipped at zero.
    """
    if not 0.0 < variance_threshold <= 1.0:
        raise ValueError("variance_threshold must lie in (0, 1]")
    X = _as_matrix(X)
    if X.shape[0] < 2:
        raise ValueError("pca needs at least 2 rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals[::-1], 0.0, None)
    evecs = evecs[:, ::-1]
    total = evals.sum()
    scale = float(np.abs(X).max())
    if total <= 0.0 or evals[0] <= (1e-12 * scale) ** 2:
        raise ValueError("rank-0 input: all rows are identical")
    cum = np.cumsum(evals) / total
    # guard the threshold comparison against cumsum rounding just below 1
    m = int(np.searchsorted(cum, variance_threshold - 1e-12) + 1)
    if condition_number is not None:
        m = int(np.count_nonzero(evals > evals[0] / condition_number))
    m = min(m, int(np.count_nonzero(evals > evals[0] * 1e-12)))
    return PcaModel(components=evecs, eigenvalues=evals, mean=mean, n_retained=max(m, 1))


@dataclass(frozen=True)
class SphereCloud:
    """Whitened PCA coordinates projected onto the unit sphere."""

    points: np.ndarray
    dropped_rows: np.ndarray
    low_rank: bool

    @property
    def n(self) -> int:
        return self.points.shape[1]


def fishers_preprocess(
    X, variance_threshold: float = 0.99, condition_number: float | None = None
) -> SphereCloud:
    """Centre, reduce by PCA, whiten and project each row to unit norm."""
    X = _as_matrix(X)
    if X.shape[0] < 3:
        raise ValueError("need at least 3 rows")
    Xc = center(X)
    model = pca(Xc, variance_threshold, condition_number)
    m = model.n_retained
    Z = model.transform(Xc, m) / np.sqrt(model.eigenvalues[:m])
    norms = np.linalg.norm(Z, axis=1)
    tiny = norms <= 1e-12 * max(1.0, float(norms.max()))
    Z = Z[~tiny] / norms[~tiny, None]
    return SphereCloud(points=Z, dropped_rows=np.flatnonzero(tiny), low_rank=m < 2)
