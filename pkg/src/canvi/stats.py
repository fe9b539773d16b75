"""Random streams, standard distributions and the conformal order statistic.

Every stochastic routine in the package takes an :class:`RngStream`.  Streams
are keyed by ``(seed, stream_id)`` through :class:`numpy.random.SeedSequence`
and drive a counter-based Philox generator, so a stream's draws never depend
on how many other streams exist or in which order they were consumed.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import special

from .errors import DomainError

StreamKey = Union[int, Sequence[int]]

_MAX_U64 = 2**64 - 1


def _as_key(stream_id: StreamKey) -> tuple[int, ...]:
    key = (stream_id,) if isinstance(stream_id, (int, np.integer)) else tuple(stream_id)
    for k in key:
        if not 0 <= int(k) <= _MAX_U64:
            raise DomainError(f"stream id components must be unsigned 64-bit, got {k}")
    return tuple(int(k) for k in key)


class RngStream:
    """A reproducible, independently keyed random stream.

    Parameters
    ----------
    seed : int
        Master seed (unsigned 64-bit).
    stream_id : int or tuple of int
        Substream label. Tuples address nested substreams; ``spawn`` appends
        one component.
    """

    def __init__(self, seed: int, stream_id: StreamKey = 0):
        if not 0 <= int(seed) <= _MAX_U64:
            raise DomainError(f"seed must be unsigned 64-bit, got {seed}")
        self.seed = int(seed)
        self.key = _as_key(stream_id)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(seq))

    @property
    def stream_id(self) -> tuple[int, ...]:
        return self.key

    def spawn(self, *labels: int) -> "RngStream":
        """Child stream; independent of this stream's consumption state."""
        return RngStream(self.seed, self.key + _as_key(labels))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.key})"


def std_normal_cdf(z):
    """Standard normal CDF."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("std_normal_cdf requires finite input")
    out = special.ndtr(z)
    return float(out) if out.ndim == 0 else out


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open unit interval."""
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0) & (p < 1)):
        raise DomainError("std_normal_quantile requires 0 < p < 1")
    out = special.ndtri(p)
    return float(out) if out.ndim == 0 else out


def std_normal_logpdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * z * z - 0.5 * math.log(2.0 * math.pi)


def conformal_rank(n: int, alpha: float) -> int:
    """1-based rank ``ceil((n + 1)(1 - alpha))`` of the conformal order statistic.

    May exceed ``n``; callers treat that as an infinite threshold.
    """
    if n < 1:
        raise DomainError("need at least one calibration score")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    x = (n + 1) * (1.0 - alpha)
    # shave float noise so e.g. 101 * 0.9 cannot round up past an integer
    return max(1, math.ceil(x * (1.0 - 1e-12)))


def conformal_quantile(scores: Iterable[float], alpha: float) -> float:
    """Split-conformal threshold: the ``ceil((N+1)(1-alpha))``-th smallest score.

    Scores may contain ``+inf``.  When the rank exceeds ``N`` the threshold is
    ``+inf`` and the induced region is the whole parameter domain.
    """
    s = np.asarray(list(scores) if not isinstance(scores, np.ndarray) else scores, dtype=float).ravel()
    if s.size == 0:
        raise DomainError("conformal_quantile needs a non-empty score list")
    if np.isnan(s).any():
        raise DomainError("scores must not contain NaN")
    if np.any(s == -np.inf):
        raise DomainError("scores must not be -inf")
    k = conformal_rank(s.size, alpha)
    if k > s.size:
        return math.inf
    return float(np.partition(s, k - 1)[k - 1])


def sample_std_normal(rng: RngStream, size=None):
    return rng.generator.standard_normal(size)


def sample_uniform(rng: RngStream, lo, hi, size=None):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi < lo) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise DomainError("uniform bounds must be finite with lo <= hi")
    u = rng.generator.random(size if size is not None else np.broadcast(lo, hi).shape)
    out = lo + (hi - lo) * u
    # lo == hi must return exactly lo
    out = np.where(hi == lo, lo, out)
    return float(out) if np.ndim(out) == 0 else out


def sample_lognormal(rng: RngStream, mu, sigma, size=None):
    """Lognormal draw; ``mu`` and ``sigma`` are the log-space mean and stddev."""
    if np.any(np.asarray(sigma) <= 0):
        raise DomainError("lognormal sigma must be positive")
    return rng.generator.lognormal(mu, sigma, size)


def sample_bernoulli(rng: RngStream, p, size=None):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.isnan(p).any():
        raise DomainError("bernoulli p must lie in [0, 1]")
    u = rng.generator.random(size if size is not None else p.shape)
    out = (u < p).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def sample_binomial(rng: RngStream, n, p, size=None):
    n_arr = np.asarray(n)
    p_arr = np.asarray(p, dtype=float)
    if np.any(n_arr < 0) or np.any((p_arr < 0) | (p_arr > 1)) or np.isnan(p_arr).any():
        raise DomainError("binomial requires n >= 0 and 0 <= p <= 1")
    return rng.generator.binomial(n, p, size)
