import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nasgeom.idest import (
    DEFAULT_ALPHAS,
    ESTIMATORS,
    EstimatorError,
    EstimatorParams,
    estimate_all,
    estimate_corrint,
    estimate_fishers,
    estimate_knn_carter,
    estimate_lpca,
    estimate_mada,
    estimate_mind_ml,
    estimate_mle,
    estimate_mom,
    estimate_twonn,
    fishers_dimension,
    fishers_profile,
    lambert_w0,
    mind_loglik,
    sphere_inseparability,
)
from nasgeom.synth import embed, sample_cube, sample_gaussian, sample_sphere

# value of W(1) from 200 bisection steps on w*exp(w) - 1 over [0, 1], frozen
W1 = 0.5671432904097838


def _bisect_w(x, lo, hi):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * math.exp(mid) < x:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_w1_oracle_value():
    assert _bisect_w(1.0, 0.0, 1.0) == pytest.approx(W1, abs=1e-15)
    assert lambert_w0(1.0) == pytest.approx(W1, abs=1e-15)


def test_lambert_trivial_points():
    assert lambert_w0(0.0) == 0.0
    assert lambert_w0(math.e) == pytest.approx(1.0, abs=1e-15)
    assert lambert_w0(-1 / math.e) == -1.0


@given(st.floats(-1 / math.e + 1e-12, 1e300))
@settings(max_examples=300, deadline=None)
def test_lambert_residual(x):
    w = lambert_w0(x)
    if x < 1e100:
        assert abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, abs(x))
    else:
        assert abs(w + math.log(w) - math.log(x)) <= 1e-12 * math.log(x)


def test_lambert_vector_and_errors():
    out = lambert_w0(np.array([0.0, 1.0, math.e]))
    np.testing.assert_allclose(out, [0.0, W1, 1.0], atol=1e-15)
    with pytest.raises(ValueError):
        lambert_w0(-0.5)
    with pytest.raises(ValueError):
        lambert_w0(float("nan"))


def test_fishers_round_trip_example():
    p = (1 - 0.64) ** 4.5 / (0.8 * math.sqrt(2 * math.pi * 10))
    assert abs(fishers_dimension(0.8, p) - 10.0) < 1e-9


@given(st.sampled_from(DEFAULT_ALPHAS), st.integers(1, 30))
@settings(max_examples=100, deadline=None)
def test_fishers_inversion_property(alpha, n):
    assert abs(fishers_dimension(alpha, sphere_inseparability(alpha, n)) - n) < 1e-9


def test_triangle_is_fully_separable():
    angles = np.array([0.0, 2 * math.pi / 3, 4 * math.pi / 3])
    X = np.column_stack([np.cos(angles), np.sin(angles)])
    est = estimate_fishers(X)
    assert est.status == "fully-separable" and math.isnan(est.value)
    # every off-diagonal inner product is -1/2, so nothing exceeds a positive alpha
    p_hat, separable = fishers_profile(X, DEFAULT_ALPHAS)
    assert np.all(p_hat == 0.0) and np.all(separable == 1.0)


def test_profile_matches_brute_force():
    rng = np.random.default_rng(0)
    P = rng.standard_normal((40, 4))
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    alphas = np.array([0.1, 0.3, 0.5, 0.7])
    p_hat, sep = fishers_profile(P, alphas)
    for j, a in enumerate(alphas):
        per_point = [sum(P[i] @ P[k] > a * (P[i] @ P[i]) for k in range(40) if k != i) / 39 for i in range(40)]
        assert p_hat[j] == pytest.approx(np.mean(per_point), abs=1e-15)
        assert sep[j] == pytest.approx(np.mean([v == 0 for v in per_point]), abs=1e-15)


def test_profile_non_increasing():
    X = sample_cube(6, 500, seed=1).data
    est = estimate_fishers(X)
    assert np.all(np.diff(est.profile.inseparability) <= 0)
    assert np.all(np.diff(est.profile.separable_fraction) >= 0)


def test_sphere_5d_estimate():
    est = estimate_fishers(sample_sphere(5, 1000, seed=2).data)
    assert 3.5 <= est.value <= 6.5
    assert est.diagnostics["chosen_alpha"] in DEFAULT_ALPHAS
    assert est.profile.retained_n == 5


def test_fishers_alpha_choice_snaps_to_grid():
    est = estimate_fishers(sample_cube(4, 800, seed=3).data)
    a = np.asarray(est.profile.alpha_grid)
    top = a[est.profile.inseparability > 0].max()
    assert est.profile.chosen_alpha == a[np.argmin(np.abs(a - 0.8 * top))]


def test_fishers_too_few_rows():
    with pytest.raises(EstimatorError):
        estimate_fishers(np.eye(2))


def test_lpca_examples():
    t = np.linspace(0, 1, 100)[:, None]
    line = t @ np.random.default_rng(0).standard_normal((1, 64))
    assert estimate_lpca(line).value == 1
    plane = np.zeros((300, 10))
    plane[:, :2] = np.random.default_rng(1).standard_normal((300, 2))
    plane += 1e-6 * np.random.default_rng(2).standard_normal(plane.shape)
    assert estimate_lpca(plane).value == 2
    assert estimate_lpca(sample_gaussian(5, 2000, seed=3).data).value == 5
    with pytest.raises(EstimatorError):
        estimate_lpca(np.ones((10, 3)))


def test_corrint_examples():
    seg = np.random.default_rng(4).random((1000, 1))
    assert estimate_corrint(seg).value == pytest.approx(1.0, abs=0.2)
    sq = np.random.default_rng(5).random((1000, 2))
    assert estimate_corrint(sq).value == pytest.approx(2.0, abs=0.4)
    with pytest.raises(EstimatorError):
        estimate_corrint(np.zeros((50, 3)))


def test_corrint_empty_sum():
    # unit lattice: the median 2nd-neighbour radius is 1 and no pair is strictly closer
    X = np.arange(30.0)[:, None]
    with pytest.raises(EstimatorError, match="empty correlation sum"):
        estimate_corrint(X, EstimatorParams(k_corrint=(2, 3)))


def test_mle_examples():
    seg = np.random.default_rng(6).random((1000, 1))
    assert estimate_mle(seg).value == pytest.approx(1.0, abs=0.15)
    cube = sample_cube(8, 2000, seed=7).data
    assert 6.0 <= estimate_mle(cube).value <= 10.0


def test_mle_duplicate_exclusions():
    X = np.random.default_rng(8).random((100, 3))
    X[10] = X[11]
    est = estimate_mle(X)
    assert est.diagnostics["excluded"] == [10, 11]


def test_mle_too_many_duplicates():
    X = np.repeat(np.random.default_rng(9).random((30, 3)), 2, axis=0)
    with pytest.raises(EstimatorError, match="degenerate"):
        estimate_mle(X)


def test_mada_examples():
    r = np.sqrt(np.random.default_rng(10).random(2000))
    th = np.random.default_rng(11).random(2000) * 2 * np.pi
    disk = np.column_stack([r * np.cos(th), r * np.sin(th)])
    assert estimate_mada(disk).value == pytest.approx(2.0, abs=0.4)
    assert estimate_mada(sample_cube(4, 2000, seed=12).data).value == pytest.approx(4.0, rel=0.3)


def test_mada_lattice_interior():
    X = np.arange(100.0)[:, None]
    local = estimate_mada(X).diagnostics["local"]
    np.testing.assert_allclose(local[20:80], 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        estimate_mada(X, EstimatorParams(k_mada=5))


def test_mom_lattice_endpoint():
    X = np.arange(100.0)[:, None]
    k = 20
    local = estimate_mom(X).diagnostics["local"]
    assert local[0] == pytest.approx((k + 1) / (k - 1), abs=1e-12)
    assert estimate_mom(sample_cube(5, 2000, seed=13).data).value == pytest.approx(5.0, rel=0.3)


def test_mom_simplex_excluded():
    rng = np.random.default_rng(14)
    k = 20
    simplex = np.eye(k + 1, 30) + 100.0
    X = np.vstack([rng.random((100, 30)), simplex])
    est = estimate_mom(X)
    assert est.diagnostics["excluded"] == list(range(100, 100 + k + 1))


def test_twonn_examples():
    sq = np.random.default_rng(15).random((2000, 2))
    assert estimate_twonn(sq).value == pytest.approx(2.0, abs=0.3)
    seg = np.random.default_rng(16).random((2000, 1))
    assert estimate_twonn(seg).value == pytest.approx(1.0, abs=0.2)
    with pytest.raises(EstimatorError, match="too few|at least"):
        estimate_twonn(seg[:10])


def test_mind_examples():
    mli, mlk = estimate_mind_ml(sample_cube(3, 2000, seed=17).data)
    assert mli.value == 3
    assert 2.4 <= mlk.value <= 3.6


def test_mind_loglik_direct():
    N = 50
    assert mind_loglik(1.0, np.full(N, 0.5), 2) == pytest.approx(-N * math.log(2), abs=1e-12)


def test_knn_examples():
    seg = np.random.default_rng(18).random((2000, 1))
    assert 0.7 <= estimate_knn_carter(seg).value <= 1.5
    est = estimate_knn_carter(sample_cube(4, 2000, seed=19).data)
    assert 2.5 <= est.value <= 6.0
    with pytest.raises(EstimatorError, match="degenerate regression"):
        estimate_knn_carter(seg, EstimatorParams(knn_subset_fractions=(0.5, 0.5, 1.0)))


def test_params_validation():
    with pytest.raises(ValueError):
        EstimatorParams(k_mle=1)
    with pytest.raises(ValueError):
        EstimatorParams(alphas=(0.9, 0.8))
    with pytest.raises(ValueError):
        EstimatorParams(discard_fraction=0.6)


@pytest.fixture(scope="module")
def cloud():
    return embed(sample_cube(3, 400, seed=20), 8, seed=21).data


@pytest.fixture(scope="module")
def baseline(cloud):
    return estimate_all(cloud)


def test_estimate_all_covers_registry(baseline):
    assert set(baseline) == set(ESTIMATORS)
    assert all(e.ok for e in baseline.values())


def test_rotation_translation_invariance(cloud, baseline, rot):
    moved = estimate_all(cloud @ rot(8, 5).T + 3.0)
    for name in ESTIMATORS:
        assert moved[name].value == pytest.approx(baseline[name].value, abs=1e-6), name


def test_scale_invariance(cloud, baseline):
    scaled = estimate_all(3.0 * cloud)
    for name in ESTIMATORS:
        assert scaled[name].value == pytest.approx(baseline[name].value, abs=1e-6), name


def test_estimate_all_reports_errors_without_raising():
    out = estimate_all(np.zeros((30, 4)))
    assert all(e.status in ("error", "fully-separable") for e in out.values())
    assert "error" in out["mle"].diagnostics


def test_twonn_lattice_is_an_error():
    with pytest.raises(EstimatorError, match="ratios"):
        estimate_twonn(np.arange(40.0)[:, None])
