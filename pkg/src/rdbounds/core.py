"""Finite metric spaces, discrete distributions, deterministic RNG streams.

Everything here is immutable after construction. Arrays handed out by the
dataclasses are flagged read-only so that sharing across threads is safe.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidDistribution, InvalidSpace, UnknownPoint

METRIC_TOL = 1e-9
WEIGHT_SUM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FiniteMetricSpace:
    """Labelled points with a full symmetric distance matrix.

    ``embedding`` (shape ``(n, k)``) is optional; when given, ``dist`` must be
    the Euclidean distance between its rows.
    """

    points: tuple
    dist: np.ndarray
    embedding: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=float)
        n = len(self.points)
        if d.shape != (n, n):
            raise InvalidSpace(f"distance matrix shape {d.shape} does not match {n} points")
        if not np.all(np.isfinite(d)):
            raise InvalidSpace("non-finite distance")
        if np.any(d < -METRIC_TOL):
            raise InvalidSpace("negative distance")
        if n and np.max(np.abs(np.diag(d))) > METRIC_TOL:
            raise InvalidSpace("nonzero self-distance")
        if np.max(np.abs(d - d.T), initial=0.0) > METRIC_TOL:
            raise InvalidSpace("distance matrix is not symmetric")
        if len(set(self.points)) != n:
            raise InvalidSpace("duplicate point labels")
        if self.embedding is not None:
            emb = np.asarray(self.embedding, dtype=float)
            if emb.ndim != 2 or emb.shape[0] != n or not np.all(np.isfinite(emb)):
                raise InvalidSpace("embedding must have one finite row per point")
            if n and np.max(np.abs(_euclid(emb) - d)) > METRIC_TOL:
                raise InvalidSpace("embedding disagrees with distance matrix")
            object.__setattr__(self, "embedding", _frozen(emb))
        else:
            # Euclidean distances satisfy it already; check d[i,j] <= d[i,k] + d[k,j] one pivot at a time
            for k in range(n):
                excess = d - (d[:, k][:, None] + d[k, :][None, :])
                if excess.max() > METRIC_TOL:
                    raise InvalidSpace("triangle inequality violated")
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "dist", _frozen(np.clip(d, 0.0, None)))

    @classmethod
    def from_points(cls, coords, labels: Sequence | None = None) -> "FiniteMetricSpace":
        """Euclidean space on the rows of ``coords`` (1-D input is a point set on the line)."""
        emb = np.asarray(coords, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        if labels is None:
            labels = range(emb.shape[0])
        return cls(tuple(labels), _euclid(emb), emb)

    @classmethod
    def from_matrix(cls, dist, labels: Sequence | None = None) -> "FiniteMetricSpace":
        d = np.asarray(dist, dtype=float)
        if labels is None:
            labels = range(d.shape[0])
        return cls(tuple(labels), d)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if len(self) else 0.0

    def index(self, label) -> int:
        try:
            return self.points.index(label)
        except ValueError:
            raise UnknownPoint(label) from None


def _euclid(emb: np.ndarray) -> np.ndarray:
    diff = emb[:, None, :] - emb[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability weights over the points of a :class:`FiniteMetricSpace`."""

    space: FiniteMetricSpace
    weights: np.ndarray
    normalization: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.space),):
            raise InvalidDistribution("weight vector length does not match the space")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidDistribution("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidDistribution(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def restricted(self) -> "DiscreteDistribution":
        """The same measure on the sub-space spanned by its support."""
        s = self.support
        sub = FiniteMetricSpace(
            tuple(self.space.points[i] for i in s),
            self.space.dist[np.ix_(s, s)],
            None if self.space.embedding is None else self.space.embedding[s],
        )
        return make_distribution(sub, self.weights[s])


def make_distribution(space: FiniteMetricSpace, raw_weights) -> DiscreteDistribution:
    """Normalize ``raw_weights`` into a distribution on ``space``.

    The divisor is kept in ``normalization``.
    """
    w = np.asarray(raw_weights, dtype=float)
    if w.shape != (len(space),):
        raise InvalidDistribution(f"expected {len(space)} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidDistribution("non-finite weight")
    if np.any(w < 0):
        raise InvalidDistribution("negative weight")
    total = float(w.sum())
    if total <= 0:
        raise InvalidDistribution("all weights are zero")
    w = w / total
    # renormalize once more so the sum is 1 to rounding
    return DiscreteDistribution(space, w / w.sum(), total)


def uniform(space: FiniteMetricSpace) -> DiscreteDistribution:
    return make_distribution(space, np.ones(len(space)))


def second_moments(mu: DiscreteDistribution) -> np.ndarray:
    """E d^2(Z, t) for every point t of the space."""
    d = mu.space.dist
    return mu.weights @ (d * d)


def sigma_m(mu: DiscreteDistribution) -> float:
    """Soft diameter: min over points t of sqrt(E d^2(Z, t))."""
    return float(math.sqrt(max(second_moments(mu).min(), 0.0)))


def sigma_m_center(mu: DiscreteDistribution) -> int:
    return int(np.argmin(second_moments(mu)))


def sigma_m_continuous(mu: DiscreteDistribution) -> float | None:
    """Euclidean refinement: the barycenter minimizes E|Z - t|^2 over all of R^k."""
    emb = mu.space.embedding
    if emb is None:
        return None
    mean = mu.weights @ emb
    return float(math.sqrt(max(mu.weights @ np.sum((emb - mean) ** 2, axis=1), 0.0)))


# --- deterministic random streams -------------------------------------------------

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream: Philox keyed by (seed, stream_id).

    Each call to :meth:`generator` starts the counter from zero, so the same
    stream always yields the same draws.
    """

    seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, label) -> "RngStream":
        return RngStream(self.seed, stream_hash(self.stream_id, label))


def stream_hash(*parts) -> int:
    """Stable 64-bit hash of a tuple of labels (independent of PYTHONHASHSEED)."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def rng_substream(seed: int, stream_id: int) -> RngStream:
    return RngStream(int(seed) & _MASK64, int(stream_id) & _MASK64)


def replica_stream(seed: int, experiment: str, replica: int) -> RngStream:
    """Stream for replica ``replica`` of ``experiment``: stream_id = hash(experiment, replica)."""
    return rng_substream(seed, stream_hash(experiment, int(replica)))


def ordered_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Map with an optional thread pool; results come back in input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --- small numeric helpers ----------------------------------------------------------

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10,
                       max_iter: int = 500) -> tuple[float, float]:
    """Maximize a unimodal ``f`` on ``[lo, hi]``; returns ``(argmax, max)``.

    Stops when the bracket is shorter than ``tol`` (absolute).
    """
    a, b = float(lo), float(hi)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    x = c if fc >= fd else d
    return x, max(fc, fd)


def xlogx(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def binary_entropy(x):
    """h(x) in nats, with h(0) = h(1) = 0."""
    x = np.asarray(x, dtype=float)
    return -(xlogx(x) + xlogx(1.0 - x))


def format_float(x: float) -> str:
    """17 significant digits, '.' separator; round-trips every double."""
    return f"{float(x):.17g}"
