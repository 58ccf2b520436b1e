"""Bundled oracle checks, runnable without any dataset (``nasgeom selfcheck``)."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from nasgeom.geometry import center
from nasgeom.idest import (
    DEFAULT_ALPHAS,
    estimate_all,
    fishers_dimension,
    lambert_w0,
    sphere_inseparability,
)
from nasgeom.ortho import pairwise_angle_stats
from nasgeom.synth import embed, sample_cube, sample_gaussian


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def check_fishers_roundtrip() -> Check:
    err = abs(fishers_dimension(0.8, sphere_inseparability(0.8, 10)) - 10.0)
    a, n = np.meshgrid(np.asarray(DEFAULT_ALPHAS), np.arange(1, 31))
    worst = float(np.max(np.abs(fishers_dimension(a, sphere_inseparability(a, n)) - n)))
    return Check("fishers round-trip (n=10, a=0.8; full grid)", err < 1e-9 and worst < 1e-9, f"err={err:.1e} worst={worst:.1e}")


def check_lambert() -> Check:
    x = -math.exp(-1) + np.logspace(-9, math.log10(1e6 + math.exp(-1)), 1000)
    w = lambert_w0(x)
    resid = np.abs(w * np.exp(w) - x) / np.maximum(1.0, np.abs(x))
    return Check("lambert W residual", float(resid.max()) < 1e-12, f"max rel residual={resid.max():.1e}")


def check_envelopes(n: int = 2000, dims=(2, 4, 8)) -> Check:
    worst = []
    ok = True
    for d in dims:
        X = embed(sample_cube(d, n, seed=d), 64, seed=100 + d).data
        for name, est in estimate_all(X).items():
            if name == "knn":
                continue
            inside = est.ok and 0.6 * d <= est.value <= 1.5 * d
            ok &= inside
            if not inside:
                worst.append(f"{name}@d={d}:{est.value:.2f}")
    return Check("estimator envelopes on embedded cubes", ok, ", ".join(worst) or "all within [0.6d, 1.5d]")


def check_concentration() -> Check:
    X = center(sample_gaussian(64, 128, seed=0).data)
    f_mean, _ = pairwise_angle_stats(X)
    votes = 0
    for seed in range(10):
        stds = [pairwise_angle_stats(center(sample_gaussian(d, 128, seed).data))[1] for d in (16, 64, 256)]
        votes += stds[0] >= stds[1] >= stds[2]
    ok = 88.0 <= f_mean <= 92.0 and votes > 5
    return Check("quasi-orthogonality concentration", ok, f"f_mean={f_mean:.2f}, monotone in {votes}/10 seeds")


CHECKS = (check_fishers_roundtrip, check_lambert, check_envelopes, check_concentration)


def run_all() -> list[Check]:
    out = []
    for fn in CHECKS:
        t = time.perf_counter()
        c = fn()
        c.seconds = time.perf_counter() - t
        out.append(c)
    return out
