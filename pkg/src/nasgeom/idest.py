"""Intrinsic-dimension estimators.

Nine estimators are provided (MiND_ML yields two numbers, MLi and MLk, so ten
values in total). The neighbour-based ones accept a precomputed distance
matrix so a single :func:`nasgeom.geometry.pairwise_distances` call can feed
all of them; :func:`estimate_all` does exactly that.

Degenerate points (zero neighbour distances, equal radii) are excluded and
reported in the diagnostics. If more than ``params.max_excluded`` of the cloud
is excluded the estimator raises :class:`EstimatorError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from nasgeom import rng
from nasgeom.geometry import (
    NeighborTable,
    _as_matrix,
    center,
    fishers_preprocess,
    knn,
    pairwise_distances,
)

INV_E = math.exp(-1.0)

DEFAULT_ALPHAS = tuple(round(0.6 + 0.02 * i, 2) for i in range(20))


class EstimatorError(ValueError):
    """An estimator could not produce a meaningful value for this cloud."""


@dataclass
class EstimatorParams:
    """Tunable knobs for every estimator. Defaults follow common reference settings."""

    k_corrint: tuple[int, int] = (10, 20)
    k_mle: int = 20
    k_mada: int = 20
    k_mom: int = 20
    k_mind: int = 10
    k_knn: int = 5
    knn_subset_fractions: tuple[float, ...] = (0.125, 0.25, 0.5, 1.0)
    knn_seed: int = 0
    discard_fraction: float = 0.1
    alpha_fo: float = 0.05
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    alpha_factor: float = 0.8
    variance_threshold: float = 0.99
    # when set, FisherS keeps PCA components above largest/condition_number instead
    fishers_condition_number: float | None = None
    max_excluded: float = 0.2

    def __post_init__(self):
        ks = (*self.k_corrint, self.k_mle, self.k_mada, self.k_mom, self.k_mind, self.k_knn)
        if min(ks) < 2:
            raise ValueError("neighbour counts must be >= 2")
        if not 0.0 <= self.discard_fraction < 0.5:
            raise ValueError("discard_fraction must lie in [0, 0.5)")
        a = np.asarray(self.alphas, dtype=float)
        if a.size == 0 or np.any(np.diff(a) <= 0) or a[0] <= 0 or a[-1] >= 1:
            raise ValueError("alphas must be strictly increasing inside (0, 1)")


@dataclass(frozen=True)
class FisherSProfile:
    alpha_grid: np.ndarray
    inseparability: np.ndarray
    separable_fraction: np.ndarray
    dimension_profile: np.ndarray
    chosen_alpha: float
    retained_n: int


@dataclass
class IdEstimate:
    method: str
    value: float
    status: str = "ok"
    diagnostics: dict[str, Any] = field(default_factory=dict)
    profile: FisherSProfile | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# -- Lambert W ----------------------------------------------------------------


def _w0_guess(x: np.ndarray) -> np.ndarray:
    w = np.empty_like(x)
    near = x < -0.25
    p = np.sqrt(np.maximum(2.0 * (math.e * x[near] + 1.0), 0.0))
    w[near] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    mid = ~near & (x <= 3.0)
    w[mid] = np.log1p(x[mid])
    big = x > 3.0
    l1 = np.log(x[big])
    l2 = np.log(l1)
    w[big] = l1 - l2 + l2 / l1
    return w


def lambert_w0(x):
    """Principal branch of the Lambert W function for real ``x >= -1/e``.

    Halley iteration on ``w*exp(w) - x`` from a branch-point series, ``log1p``
    or asymptotic initial guess. Above 1e100 the iteration switches to Newton
    on ``w + log(w) - log(x)`` to stay clear of overflow. Accepts scalars or
    arrays; returns the same kind.
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(np.isnan(x)):
        raise ValueError("lambert_w0 got NaN")
    # allow a couple of ulps of slack at the branch point
    if np.any(x < -INV_E * (1.0 + 4 * np.finfo(float).eps)):
        raise ValueError("lambert_w0 is real only for x >= -1/e")
    w = _w0_guess(x)
    at_branch = math.e * x + 1.0 <= 0.0
    huge = x > 1e100
    halley = ~at_branch & ~huge & (x != 0.0)
    for _ in range(64):
        wh = w[halley]
        xh = x[halley]
        ew = np.exp(wh)
        f = wh * ew - xh
        wp1 = wh + 1.0
        step = f / (ew * wp1 - (wh + 2.0) * f / (2.0 * wp1))
        w[halley] = wh - step
        if np.all(np.abs(step) <= 4 * np.finfo(float).eps * (1.0 + np.abs(wh))):
            break
    if np.any(huge):
        lx = np.log(x[huge])
        wh = w[huge]
        for _ in range(64):
            step = (wh + np.log(wh) - lx) / (1.0 + 1.0 / wh)
            wh = wh - step
            if np.all(np.abs(step) <= 4 * np.finfo(float).eps * wh):
                break
        w[huge] = wh
    w[at_branch] = -1.0
    w[x == 0.0] = 0.0
    return float(w[0]) if scalar else w


# -- FisherS ------------------------------------------------------------------


def fishers_dimension(alpha, p_bar):
    """Dimension of the uniform sphere whose inseparability probability at margin
    ``alpha`` equals ``p_bar``.

    Inverts ``p = (1-a^2)^((n-1)/2) / (a*sqrt(2*pi*n))`` for ``n`` through the
    Lambert W function. Vectorised over both arguments.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    p_bar = np.asarray(p_bar, dtype=np.float64)
    a2 = alpha * alpha
    log_term = -np.log1p(-a2)
    arg = log_term / (2.0 * np.pi * p_bar * p_bar * a2 * (1.0 - a2))
    out = lambert_w0(arg) / log_term
    return float(out) if np.ndim(out) == 0 else out


def sphere_inseparability(alpha, n):
    """Closed-form mean inseparability probability on the ``n``-sphere."""
    alpha = np.asarray(alpha, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return (1.0 - alpha * alpha) ** ((n - 1.0) / 2.0) / (alpha * np.sqrt(2.0 * np.pi * n))


def fishers_profile(points: np.ndarray, alphas) -> tuple[np.ndarray, np.ndarray]:
    """Empirical inseparability on a unit-sphere cloud.

    Returns ``(p_hat, separable_fraction)`` per alpha. ``p_hat`` is the mean over
    points ``x`` of the fraction of other points ``y`` with ``(x, y) > a (x, x)``;
    ``separable_fraction`` is the share of points separable from every other.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    n = points.shape[0]
    gram = points @ points.T
    ratio = gram / np.diag(gram)[:, None]
    np.fill_diagonal(ratio, -np.inf)
    ratio.sort(axis=1)
    # per row: number of entries strictly greater than each alpha
    above = np.empty((n, alphas.size))
    for i in range(n):
        above[i] = n - np.searchsorted(ratio[i], alphas, side="right")
    p_hat = above.mean(axis=0) / (n - 1)
    separable = (above == 0).mean(axis=0)
    return p_hat, separable


def estimate_fishers(X, params: EstimatorParams | None = None) -> IdEstimate:
    params = params or EstimatorParams()
    X = _as_matrix(X)
    if X.shape[0] < 3:
        raise EstimatorError("FisherS needs at least 3 rows")
    try:
        cloud = fishers_preprocess(X, params.variance_threshold, params.fishers_condition_number)
    except ValueError as exc:
        raise EstimatorError(str(exc)) from exc
    if cloud.points.shape[0] < 3:
        raise EstimatorError("fewer than 3 rows left after whitening")
    alphas = np.asarray(params.alphas, dtype=np.float64)
    p_hat, separable = fishers_profile(cloud.points, alphas)
    with np.errstate(divide="ignore", invalid="ignore"):
        dims = np.full(alphas.size, np.nan)
        pos = p_hat > 0
        dims[pos] = fishers_dimension(alphas[pos], p_hat[pos])
    diag = {
        "retained_n": cloud.n,
        "low_rank": cloud.low_rank,
        "dropped_rows": cloud.dropped_rows.tolist(),
        "alphas": alphas.tolist(),
        "inseparability": p_hat.tolist(),
    }
    if not np.any(pos):
        return IdEstimate("fishers", float("nan"), "fully-separable", diag)
    target = params.alpha_factor * alphas[pos].max()
    idx = int(np.argmin(np.abs(alphas - target)))
    # p_hat is non-increasing, so anything below the max positive alpha is positive
    chosen = float(alphas[idx])
    value = float(dims[idx])
    diag.update(chosen_alpha=chosen, p_bar=float(p_hat[idx]))
    profile = FisherSProfile(alphas, p_hat, separable, dims, chosen, cloud.n)
    return IdEstimate("fishers", value, "ok", diag, profile)


# -- lPCA ---------------------------------------------------------------------


def estimate_lpca(X, params: EstimatorParams | None = None) -> IdEstimate:
    """Count of covariance eigenvalues above ``alpha_fo`` times the largest."""
    params = params or EstimatorParams()
    Xc = center(X)
    evals = np.linalg.eigvalsh(Xc.T @ Xc / (Xc.shape[0] - 1))[::-1]
    scale = float(np.abs(Xc).max()) if Xc.size else 0.0
    if evals[0] <= (1e-12 * scale) ** 2 or scale == 0.0:
        raise EstimatorError("zero total variance")
    value = int(np.count_nonzero(evals > params.alpha_fo * evals[0]))
    return IdEstimate("lpca", float(value), "ok", {"eigenvalues": evals.tolist()})


# -- neighbour-based estimators ----------------------------------------------


def _distances(X, distances) -> np.ndarray:
    if distances is not None:
        return np.asarray(distances, dtype=np.float64)
    return pairwise_distances(X)


def _radii(D: np.ndarray, k: int, neighbors: NeighborTable | None) -> np.ndarray:
    """Sorted distances to the first ``k`` neighbours, reusing ``neighbors`` if deep enough."""
    if neighbors is not None and neighbors.k >= k:
        return neighbors.distances[:, :k]
    return knn(None, k, distances=D).distances


def _check_excluded(method: str, excluded: np.ndarray, n: int, limit: float) -> None:
    if excluded.size > limit * n:
        raise EstimatorError(
            f"{method}: {excluded.size} of {n} points degenerate (limit {limit:.0%})"
        )


def estimate_corrint(X, params: EstimatorParams | None = None, distances=None, neighbors=None) -> IdEstimate:
    """Correlation-sum slope between the median k1-th and k2-th neighbour radii."""
    params = params or EstimatorParams()
    k1, k2 = params.k_corrint
    D = _distances(X, distances)
    n = D.shape[0]
    if n < k2 + 1:
        raise EstimatorError(f"CorrInt needs N >= {k2 + 1}")
    T = _radii(D, k2, neighbors)
    r1 = float(np.median(T[:, k1 - 1]))
    r2 = float(np.median(T[:, k2 - 1]))
    if r1 <= 0.0 or r2 <= r1:
        raise EstimatorError("CorrInt: zero or coincident radii")
    upper = D[np.triu_indices(n, k=1)]
    norm = 2.0 / (n * (n - 1))
    c1 = norm * np.count_nonzero(upper < r1)
    c2 = norm * np.count_nonzero(upper < r2)
    if c1 == 0.0:
        raise EstimatorError("empty correlation sum")
    value = (math.log(c2) - math.log(c1)) / (math.log(r2) - math.log(r1))
    return IdEstimate("corrint", value, "ok", {"r1": r1, "r2": r2, "c1": c1, "c2": c2})


def estimate_mle(X, params: EstimatorParams | None = None, distances=None, neighbors=None) -> IdEstimate:
    """Levina-Bickel local MLE with MacKay-Ghahramani inverse averaging."""
    params = params or EstimatorParams()
    k = params.k_mle
    D = _distances(X, distances)
    n = D.shape[0]
    if n <= k:
        raise EstimatorError(f"MLE needs N > k={k}")
    T = _radii(D, k, neighbors)
    excluded = np.flatnonzero(T[:, 0] <= 0.0)
    _check_excluded("MLE", excluded, n, params.max_excluded)
    keep = np.setdiff1d(np.arange(n), excluded)
    Tk = T[keep, k - 1 : k]
    inv = np.mean(np.log(Tk / T[keep, : k - 1]), axis=1)
    mean_inv = float(inv.mean())
    if mean_inv <= 0.0:
        raise EstimatorError("MLE: all neighbour radii equal")
    diag = {"excluded": excluded.tolist(), "k": k, "local": 1.0 / inv}
    return IdEstimate("mle", 1.0 / mean_inv, "ok", diag)


def estimate_mada(X, params: EstimatorParams | None = None, distances=None, neighbors=None) -> IdEstimate:
    """Local ``ln 2 / ln(T_k / T_{k/2})`` averaged over points."""
    params = params or EstimatorParams()
    k = params.k_mada
    if k % 2:
        raise ValueError("MADA needs an even k")
    D = _distances(X, distances)
    n = D.shape[0]
    if n <= k:
        raise EstimatorError(f"MADA needs N > k={k}")
    T = _radii(D, k, neighbors)
    tk, th = T[:, k - 1], T[:, k // 2 - 1]
    bad = (th <= 0.0) | (tk <= th)
    excluded = np.flatnonzero(bad)
    _check_excluded("MADA", excluded, n, params.max_excluded)
    local = math.log(2.0) / np.log(tk[~bad] / th[~bad])
    diag = {"excluded": excluded.tolist(), "k": k, "local": local}
    return IdEstimate("mada", float(local.mean()), "ok", diag)


def estimate_mom(X, params: EstimatorParams | None = None, distances=None, neighbors=None) -> IdEstimate:
    """Method of moments: local ``m1 / (w - m1)`` with ``w`` the k-th radius."""
    params = params or EstimatorParams()
    k = params.k_mom
    D = _distances(X, distances)
    n = D.shape[0]
    if n <= k:
        raise EstimatorError(f"MOM needs N > k={k}")
    T = _radii(D, k, neighbors)
    w = T[:, -1]
    m1 = T.mean(axis=1)
    gap = w - m1
    bad = (w <= 0.0) | (gap <= 1e-12 * np.maximum(w, 1e-300))
    excluded = np.flatnonzero(bad)
    _check_excluded("MOM", excluded, n, params.max_excluded)
    local = m1[~bad] / gap[~bad]
    diag = {"excluded": excluded.tolist(), "k": k, "local": local}
    return IdEstimate("mom", float(local.mean()), "ok", diag)


def estimate_twonn(X, params: EstimatorParams | None = None, distances=None, neighbors=None) -> IdEstimate:
    """Two-nearest-neighbour ratio fit through the origin."""
    params = params or EstimatorParams()
    D = _distances(X, distances)
    n = D.shape[0]
    if n < 20:
        raise EstimatorError("TwoNN needs at least 20 points")
    T = _radii(D, 2, neighbors)
    excluded = np.flatnonzero(T[:, 0] <= 0.0)
    _check_excluded("TwoNN", excluded, n, params.max_excluded)
    mu = np.sort(T[T[:, 0] > 0.0, 1] / T[T[:, 0] > 0.0, 0])
    m = mu.size
    n_fit = int(math.floor(m * (1.0 - params.discard_fraction)))
    if n_fit < 2:
        raise EstimatorError("TwoNN: too few ratios to fit")
    F = np.arange(1, n_fit + 1) / m
    x = np.log(mu[:n_fit])
    y = -np.log1p(-F)
    if not np.any(x > 0.0):
        raise EstimatorError("TwoNN: all neighbour ratios equal 1")
    value = float(np.dot(x, y) / np.dot(x, x))
    return IdEstimate("twonn", value, "ok", {"excluded": excluded.tolist(), "n_fit": n_fit})


def _mind_loglik(d, log_rho: np.ndarray, k: int) -> np.ndarray:
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    # ln(1 - rho^d) = log(-expm1(d ln rho))
    tail = np.log(-np.expm1(np.outer(d, log_rho)))
    return log_rho.size * np.log(d) + (d - 1.0) * log_rho.sum() + (k - 1) * tail.sum(axis=1)


def _golden_max(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def mind_loglik(d, rho, k: int):
    """Log-likelihood of dimension ``d`` given neighbour ratios ``rho = T_1 / T_k``."""
    out = _mind_loglik(d, np.log(np.asarray(rho, dtype=np.float64)), k)
    return float(out[0]) if np.ndim(d) == 0 else out


def estimate_mind_ml(
    X,
    params: EstimatorParams | None = None,
    distances=None,
    ambient: int | None = None,
    neighbors=None,
) -> tuple[IdEstimate, IdEstimate]:
    """MiND maximum-likelihood estimates: integer (MLi) and continuous (MLk)."""
    params = params or EstimatorParams()
    k = params.k_mind
    D = _distances(X, distances)
    n = D.shape[0]
    if ambient is None:
        ambient = _as_matrix(X).shape[1]
    if n <= k:
        raise EstimatorError(f"MiND needs N > k={k}")
    T = _radii(D, k, neighbors)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = T[:, 0] / T[:, -1]
    bad = ~np.isfinite(rho) | (rho <= 0.0) | (rho >= 1.0)
    excluded = np.flatnonzero(bad)
    _check_excluded("MiND", excluded, n, params.max_excluded)
    log_rho = np.log(rho[~bad])
    grid = np.arange(1, ambient + 1, dtype=np.float64)
    mli = float(grid[int(np.argmax(_mind_loglik(grid, log_rho, k)))])
    mlk = _golden_max(lambda d: float(_mind_loglik(d, log_rho, k)[0]), 1.0, float(ambient), 1e-6)
    diag = {"excluded": excluded.tolist(), "k": k, "ambient": ambient}
    return IdEstimate("mind_mli", mli, "ok", dict(diag)), IdEstimate("mind_mlk", mlk, "ok", diag)


def knn_graph_length(D: np.ndarray, k: int) -> float:
    """Total edge length of the k-nearest-neighbour graph over a distance matrix."""
    return float(knn(None, k, distances=D).distances.sum())


def estimate_knn_carter(
    X, params: EstimatorParams | None = None, distances=None, ambient: int | None = None
) -> IdEstimate:
    """Growth rate of the kNN-graph length over nested random subsets.

    ``L(n) ~ n^gamma`` with ``gamma = 1 - 1/d`` for unit edge-weight power, so
    ``d = 1 / (1 - gamma)``.
    """
    params = params or EstimatorParams()
    k = params.k_knn
    D = _distances(X, distances)
    n = D.shape[0]
    if ambient is None:
        ambient = _as_matrix(X).shape[1]
    sizes = [int(math.floor(n * f)) for f in params.knn_subset_fractions]
    if len(set(sizes)) < len(sizes) or len(sizes) < 2:
        raise EstimatorError("degenerate regression: repeated subset sizes")
    if min(sizes) <= k:
        raise EstimatorError(f"KNN: smallest subset ({min(sizes)}) must exceed k={k}")
    lengths = []
    for j, m in enumerate(sizes):
        idx = np.arange(n) if m == n else rng.generator(params.knn_seed, "knn-subset", j).choice(n, m, replace=False)
        idx = np.sort(idx)
        lengths.append(knn_graph_length(D[np.ix_(idx, idx)], k))
    lengths = np.asarray(lengths)
    if np.any(lengths <= 0.0):
        raise EstimatorError("KNN: zero graph length")
    gamma, _ = np.polyfit(np.log(sizes), np.log(lengths), 1)
    diag = {"gamma": float(gamma), "sizes": sizes, "lengths": lengths.tolist(), "k": k}
    if gamma >= 1.0:
        return IdEstimate("knn", float(ambient), "unstable", diag)
    value = float(np.clip(1.0 / (1.0 - gamma), 1.0, ambient))
    return IdEstimate("knn", value, "ok", diag)


# -- registry -----------------------------------------------------------------

ESTIMATORS = (
    "fishers",
    "corrint",
    "knn",
    "lpca",
    "mada",
    "mind_mli",
    "mind_mlk",
    "mle",
    "mom",
    "twonn",
)

_NEIGHBOUR_BASED = {
    "corrint": estimate_corrint,
    "mle": estimate_mle,
    "mada": estimate_mada,
    "mom": estimate_mom,
    "twonn": estimate_twonn,
}


def _failed(method: str, exc: Exception) -> IdEstimate:
    return IdEstimate(method, float("nan"), "error", {"error": str(exc)})


def estimate_all(X, params: EstimatorParams | None = None, methods=None) -> dict[str, IdEstimate]:
    """Run the requested estimators, sharing one distance matrix.

    Failures are returned as estimates with status ``"error"`` rather than
    raised, so one degenerate estimator never hides the others.
    """
    params = params or EstimatorParams()
    X = _as_matrix(X)
    methods = ESTIMATORS if methods is None else tuple(methods)
    unknown = set(methods) - set(ESTIMATORS)
    if unknown:
        raise ValueError(f"unknown estimators: {sorted(unknown)}")
    D = table = None
    if set(methods) - {"fishers", "lpca"}:
        D = pairwise_distances(X)
        kmax = max(params.k_corrint[1], params.k_mle, params.k_mada, params.k_mom, params.k_mind)
        if kmax < D.shape[0]:
            table = knn(None, kmax, distances=D)
    out: dict[str, IdEstimate] = {}
    for name in methods:
        if name in out:
            continue
        try:
            if name == "fishers":
                out[name] = estimate_fishers(X, params)
            elif name == "lpca":
                out[name] = estimate_lpca(X, params)
            elif name == "knn":
                out[name] = estimate_knn_carter(X, params, distances=D, ambient=X.shape[1])
            elif name in ("mind_mli", "mind_mlk"):
                mli, mlk = estimate_mind_ml(
                    X, params, distances=D, ambient=X.shape[1], neighbors=table
                )
                out["mind_mli"], out["mind_mlk"] = mli, mlk
            else:
                out[name] = _NEIGHBOUR_BASED[name](X, params, distances=D, neighbors=table)
        except (EstimatorError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            if name in ("mind_mli", "mind_mlk"):
                out["mind_mli"], out["mind_mlk"] = _failed("mind_mli", exc), _failed("mind_mlk", exc)
            else:
                out[name] = _failed(name, exc)
    return {name: out[name] for name in methods}
