"""Seeded synthetic data: manifolds with known dimension and noise images."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from nasgeom import rng
from nasgeom.netlab import ImageBatch


@dataclass(frozen=True)
class ManifoldSample:
    data: np.ndarray
    true_dim: int
    kind: str
    noise_sigma: float = 0.0

    @property
    def ambient_dim(self) -> int:
        return self.data.shape[1]


def _check(d: int, n: int) -> None:
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if n < 2:
        raise ValueError("need at least 2 points")


def sample_cube(d: int, n: int, seed: int) -> ManifoldSample:
    """Uniform on ``[0, 1]^d``."""
    _check(d, n)
    return ManifoldSample(rng.generator(seed, "cube", d).random((n, d)), d, "cube")


def sample_sphere(d: int, n: int, seed: int) -> ManifoldSample:
    """Uniform on the unit sphere ``S^(d-1)`` in ``R^d`` (intrinsic dimension ``d - 1``)."""
    _check(d, n)
    z = rng.generator(seed, "sphere", d).standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return ManifoldSample(z, d - 1, "sphere")


def sample_gaussian(d: int, n: int, seed: int) -> ManifoldSample:
    _check(d, n)
    return ManifoldSample(rng.generator(seed, "gaussian", d).standard_normal((n, d)), d, "gaussian")


def random_rotation(dim: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix)."""
    a = rng.generator(seed, "rotation", dim).standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def embed(sample: ManifoldSample, D: int, seed: int, noise_sigma: float = 0.0) -> ManifoldSample:
    """Zero-pad to ``D`` columns, rotate randomly, then add isotropic noise."""
    n, d = sample.data.shape
    if D < d:
        raise ValueError(f"cannot embed {d} columns into {D}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    padded = np.zeros((n, D))
    padded[:, :d] = sample.data
    out = padded @ random_rotation(D, seed).T
    if noise_sigma > 0:
        out = out + noise_sigma * rng.generator(seed, "noise", D).standard_normal((n, D))
    return replace(sample, data=out, noise_sigma=float(noise_sigma))


def synth_images(
    count: int,
    shape: tuple[int, int, int] = (3, 32, 32),
    seed: int = 0,
    num_classes: int | None = 10,
) -> ImageBatch:
    """Uniform-noise images in ``[0, 1]``; labels cycle through ``num_classes``."""
    if count < 2:
        raise ValueError("count must be >= 2")
    data = rng.generator(seed, "images").random((count, *shape))
    labels = None if not num_classes else np.arange(count) % num_classes
    return ImageBatch(data, labels)
