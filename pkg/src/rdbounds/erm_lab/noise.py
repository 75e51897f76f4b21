"""Unit-variance noise laws and the exact law of their sample means."""

from __future__ import annotations

import math

import numpy as np

NOISE_KINDS = ("gaussian", "rademacher_scaled", "uniform_scaled")
_UNIFORM_HALF_WIDTH = math.sqrt(3.0)  # Uniform[-sqrt 3, sqrt 3] has unit variance
_CHUNK = 1 << 22


def check_noise_kind(kind: str) -> None:
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")


def noise(kind: str, shape, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. centered unit-variance noise of the given kind."""
    check_noise_kind(kind)
    if kind == "gaussian":
        return rng.standard_normal(shape)
    if kind == "rademacher_scaled":
        return rng.integers(0, 2, size=shape) * 2.0 - 1.0
    return rng.uniform(-_UNIFORM_HALF_WIDTH, _UNIFORM_HALF_WIDTH, size=shape)


def mean_noise(kind: str, n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Average of n i.i.d. noise vectors in R^dim, drawn from its exact law.

    Gaussian and Rademacher means are sampled through sufficient statistics
    (a normal, a binomial); uniform noise is summed explicitly in chunks.
    """
    check_noise_kind(kind)
    if n < 1:
        raise ValueError("n must be positive")
    if kind == "gaussian":
        return rng.standard_normal(dim) / math.sqrt(n)
    if kind == "rademacher_scaled":
        return (2.0 * rng.binomial(n, 0.5, size=dim) - n) / n
    total = np.zeros(dim)
    rows = max(1, _CHUNK // max(dim, 1))
    left = n
    while left > 0:
        m = min(rows, left)
        total += rng.uniform(-_UNIFORM_HALF_WIDTH, _UNIFORM_HALF_WIDTH, size=(m, dim)).sum(axis=0)
        left -= m
    return total / n
