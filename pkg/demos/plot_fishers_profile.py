"""
The FisherS separability profile
================================

Walk through the FisherS estimator step by step: sphere projection, the
inseparability profile over alpha, and the Lambert-W inversion.
"""

import math

import numpy as np

from nasgeom.geometry import fishers_preprocess
from nasgeom.idest import (
    DEFAULT_ALPHAS,
    estimate_fishers,
    fishers_dimension,
    fishers_profile,
    lambert_w0,
    sphere_inseparability,
)
from nasgeom.synth import embed, sample_gaussian

###############################################################################
# The inversion is exact on the closed-form sphere curve
p = sphere_inseparability(0.8, 10)
print("p(0.8, n=10) =", p, "-> n =", fishers_dimension(0.8, p))
print("W(1) =", lambert_w0(1.0), " W(e) =", lambert_w0(math.e))

###############################################################################
# A 6-D Gaussian hidden in 40-D: centre, reduce, whiten, project
X = embed(sample_gaussian(6, 1500, seed=3), 40, seed=3, noise_sigma=1e-3).data
cloud = fishers_preprocess(X)
print("retained components:", cloud.n, " rows on the sphere:", cloud.points.shape[0])

###############################################################################
# The fraction of points that see a neighbour beyond the margin falls with alpha
p_hat, separable = fishers_profile(cloud.points, DEFAULT_ALPHAS)
for a, p, s in zip(DEFAULT_ALPHAS[::3], p_hat[::3], separable[::3]):
    print(f"alpha={a:.2f}  inseparable={p:.2e}  fully separable points={s:.3f}")

###############################################################################
# The estimate reads the profile at 0.8 times the last alpha with p > 0
est = estimate_fishers(X)
print("chosen alpha", est.profile.chosen_alpha, "dimension", round(est.value, 2))
finite = np.isfinite(est.profile.dimension_profile)
print("dimension along alpha:", np.round(est.profile.dimension_profile[finite], 2))
