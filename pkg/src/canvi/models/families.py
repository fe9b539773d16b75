"""Closed-form candidate families and the dispersion wrapper."""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular

from ..errors import DomainError
from ..tasks import TaskSpec, make_task
from .base import PosteriorModel

_LOG2PI = math.log(2.0 * math.pi)


class ConditionalLinearGaussian(PosteriorModel):
    """q(theta | x) = N(theta; slope @ x + intercept, covariance).

    Parameters
    ----------
    slope : array_like, shape (theta_dim, x_dim)
    intercept : array_like, shape (theta_dim,)
    covariance : array_like, shape (theta_dim, theta_dim)
        Must be symmetric positive definite.
    """

    family = "linear_gaussian"
    supports_dispersion = True

    def __init__(self, slope, intercept=None, covariance=None):
        slope = np.atleast_2d(np.asarray(slope, dtype=float))
        self.theta_dim, self.x_dim = slope.shape
        d = self.theta_dim
        intercept = np.zeros(d) if intercept is None else np.asarray(intercept, dtype=float).reshape(d)
        cov = np.eye(d) if covariance is None else np.asarray(covariance, dtype=float).reshape(d, d)
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise DomainError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise DomainError("covariance must be positive definite") from None
        if not np.all(np.isfinite(chol)) or np.any(np.diag(chol) <= 0):
            raise DomainError("covariance must be positive definite")
        self.slope = slope
        self.intercept = intercept
        self.covariance = cov
        self._chol = chol
        self._half_logdet = float(np.sum(np.log(np.diag(chol))))

    def mean(self, x) -> np.ndarray:
        x = self._coerce_x(x)
        return x @ self.slope.T + self.intercept

    def mahalanobis_sq(self, theta, x) -> np.ndarray:
        """Squared Mahalanobis distance of theta from the conditional mean."""
        theta, x = self._coerce(theta, x)
        diff = theta - self.mean(x)
        w = solve_triangular(self._chol, diff.reshape(-1, self.theta_dim).T, lower=True)
        return np.sum(w * w, axis=0).reshape(diff.shape[:-1])

    def _log_prob(self, theta, x, scale):
        maha = self.mahalanobis_sq(theta, x) / scale**2
        d = self.theta_dim
        return -0.5 * maha - self._half_logdet - d * math.log(scale) - 0.5 * d * _LOG2PI

    def _sample(self, x, rng, n, scale):
        mu = self.mean(x)[..., None, :]
        z = rng.generator.standard_normal(mu.shape[:-2] + (n, self.theta_dim))
        theta = mu + scale * (z @ self._chol.T)
        d = self.theta_dim
        logq = -0.5 * np.sum(z * z, axis=-1) - self._half_logdet - d * math.log(scale) - 0.5 * d * _LOG2PI
        return theta, logq

    def to_dict(self):
        return {
            "slope": self.slope.tolist(),
            "intercept": self.intercept.tolist(),
            "covariance": self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["slope"], d["intercept"], d["covariance"])


class PriorModel(PosteriorModel):
    """Ignores x and returns the task prior; the widest sensible candidate."""

    family = "prior"

    def __init__(self, task: TaskSpec):
        self.task = task
        self.theta_dim = task.theta_dim
        self.x_dim = task.x_dim

    def _log_prob(self, theta, x, scale):
        shape = np.broadcast_shapes(theta.shape[:-1], x.shape[:-1])
        lp = self.task.prior_log_prob(theta.reshape(-1, self.theta_dim)).reshape(theta.shape[:-1])
        return np.broadcast_to(lp, shape).copy()

    def _sample(self, x, rng, n, scale):
        lead = x.shape[:-1]
        count = int(np.prod(lead, dtype=int)) * n
        theta = self.task.sample_prior(rng, count)
        logq = self.task.prior_log_prob(theta)
        return theta.reshape(lead + (n, self.theta_dim)), logq.reshape(lead + (n,))

    def to_dict(self):
        return {"task": self.task.name, "task_params": self.task.params()}

    @classmethod
    def from_dict(cls, d):
        return cls(make_task(d["task"], **d.get("task_params", {})))


class ConditionalUniform(PosteriorModel):
    """Scalar theta uniform on an interval selected by a discrete scalar x.

    ``intervals`` maps each integer outcome of x to ``(low, high)``.  Points
    outside the interval, and outcomes without an interval, get density zero.
    Intervals are closed, so a boundary point is inside.
    """

    family = "conditional_uniform"
    theta_dim = 1
    x_dim = 1

    def __init__(self, intervals: dict):
        if not intervals:
            raise DomainError("need at least one interval")
        self.intervals = {int(k): (float(lo), float(hi)) for k, (lo, hi) in intervals.items()}
        for lo, hi in self.intervals.values():
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise DomainError("intervals must be finite with high > low")

    def _bounds(self, x):
        key = np.rint(x[..., 0]).astype(np.int64)
        lo = np.full(key.shape, np.nan)
        hi = np.full(key.shape, np.nan)
        for k, (a, b) in self.intervals.items():
            lo = np.where(key == k, a, lo)
            hi = np.where(key == k, b, hi)
        return lo, hi

    def _log_prob(self, theta, x, scale):
        lo, hi = self._bounds(x)
        t = theta[..., 0]
        with np.errstate(invalid="ignore"):
            inside = (t >= lo) & (t <= hi)
            return np.where(inside, -np.log(hi - lo), -np.inf)

    def _sample(self, x, rng, n, scale):
        lo, hi = self._bounds(x)
        if np.isnan(lo).any():
            raise DomainError("x outcome has no interval to sample from")
        u = rng.generator.random(lo.shape + (n,))
        theta = lo[..., None] + (hi - lo)[..., None] * u
        logq = np.broadcast_to(-np.log(hi - lo)[..., None], theta.shape).copy()
        return theta[..., None], logq

    def to_dict(self):
        return {"intervals": {str(k): list(v) for k, v in self.intervals.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls({int(k): tuple(v) for k, v in d["intervals"].items()})


class DispersionScaled(PosteriorModel):
    """Multiply every standard deviation of ``base`` by a constant ``c``.

    ``c < 1`` makes a tighter, under-covering candidate and ``c > 1`` a wider
    one.  ``c = 1`` reproduces the base exactly.
    """

    family = "dispersion_scaled"
    supports_dispersion = True

    def __init__(self, base: PosteriorModel, c: float):
        c = float(c)
        if not (c > 0 and np.isfinite(c)):
            raise DomainError("dispersion scale must be a positive finite number")
        if not base.supports_dispersion:
            raise DomainError(f"family {base.family!r} has no dispersion to scale")
        self.base = base
        self.c = c
        self.theta_dim = base.theta_dim
        self.x_dim = base.x_dim

    def _log_prob(self, theta, x, scale):
        return self.base._log_prob(theta, x, scale * self.c)

    def _sample(self, x, rng, n, scale):
        return self.base._sample(x, rng, n, scale * self.c)

    def to_dict(self):
        from .checkpoint import model_to_dict

        return {"c": self.c, "base": model_to_dict(self.base)}

    @classmethod
    def from_dict(cls, d):
        from .checkpoint import model_from_dict

        return cls(model_from_dict(d["base"]), d["c"])
