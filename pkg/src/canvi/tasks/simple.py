"""Closed-form benchmark tasks."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError
from .base import TaskSpec

_LOG2PI = math.log(2.0 * math.pi)


def _normal_logpdf(z, var):
    return -0.5 * (z * z / var + np.log(var) + _LOG2PI)


class _BoxUniformPrior(TaskSpec):
    low: float = -1.0
    high: float = 1.0

    def __init__(self):
        super().__init__()
        self.theta_low = np.full(self.theta_dim, float(self.low))
        self.theta_high = np.full(self.theta_dim, float(self.high))

    def _sample_prior(self, rng, n):
        return rng.generator.uniform(self.low, self.high, size=(n, self.theta_dim))

    def prior_log_prob(self, theta):
        theta = np.atleast_2d(theta)
        inside = np.all((theta >= self.low) & (theta <= self.high), axis=1)
        val = -self.theta_dim * math.log(self.high - self.low)
        return np.where(inside, val, -np.inf)


class GaussianLinear(TaskSpec):
    """theta ~ N(0, 0.1 I); x | theta ~ N(theta, 0.1 I), both 10-dimensional."""

    name = "gaussian_linear"
    theta_dim = 10
    x_dim = 10
    prior_var = 0.1
    noise_var = 0.1

    def _sample_prior(self, rng, n):
        return math.sqrt(self.prior_var) * rng.generator.standard_normal((n, self.theta_dim))

    def _simulate(self, theta, rng):
        return theta + math.sqrt(self.noise_var) * rng.generator.standard_normal(theta.shape)

    def prior_log_prob(self, theta):
        return _normal_logpdf(np.atleast_2d(theta), self.prior_var).sum(axis=1)


class GaussianLinearUniform(_BoxUniformPrior):
    """theta ~ U(-1, 1)^10; x | theta ~ N(theta, 0.1 I)."""

    name = "gaussian_linear_uniform"
    theta_dim = 10
    x_dim = 10
    noise_var = 0.1

    def _simulate(self, theta, rng):
        return theta + math.sqrt(self.noise_var) * rng.generator.standard_normal(theta.shape)


class GaussianMixture(_BoxUniformPrior):
    """theta ~ U(-10, 10)^2; x ~ 0.5 N(theta, I) + 0.5 N(theta, 0.01 I)."""

    name = "gaussian_mixture"
    theta_dim = 2
    x_dim = 2
    low, high = -10.0, 10.0

    def _simulate(self, theta, rng):
        g = rng.generator
        narrow = g.random(theta.shape[0]) < 0.5
        scale = np.where(narrow, 0.1, 1.0)[:, None]
        return theta + scale * g.standard_normal(theta.shape)


def two_moons_map(theta, a, r) -> np.ndarray:
    """Deterministic two-moons observation for given angle ``a`` and radius ``r``."""
    theta = np.atleast_2d(theta)
    a = np.asarray(a, dtype=float)
    r = np.asarray(r, dtype=float)
    t1, t2 = theta[:, 0], theta[:, 1]
    x0 = r * np.cos(a) + 0.25 - np.abs(t1 + t2) / math.sqrt(2.0)
    x1 = r * np.sin(a) + (-t1 + t2) / math.sqrt(2.0)
    return np.stack([x0, x1], axis=1)


class TwoMoons(_BoxUniformPrior):
    """Crescent-shaped bimodal posterior; theta ~ U(-1, 1)^2."""

    name = "two_moons"
    theta_dim = 2
    x_dim = 2

    def _simulate(self, theta, rng):
        g = rng.generator
        n = theta.shape[0]
        a = g.uniform(-math.pi / 2, math.pi / 2, size=n)
        r = 0.1 + 0.01 * g.standard_normal(n)
        return two_moons_map(theta, a, r)


class BivariateGaussian(TaskSpec):
    """(theta, x) jointly Gaussian, unit variances, correlation ``rho``.

    ``mean_theta`` and ``mean_x`` shift the joint; the exact posterior is
    N(mean_theta + rho (x - mean_x), 1 - rho^2).
    """

    name = "bivariate_gaussian"
    theta_dim = 1
    x_dim = 1

    def __init__(self, rho: float = 0.3, mean_theta: float = 0.0, mean_x: float = 0.0):
        if not abs(rho) < 1:
            raise DomainError("|rho| must be < 1")
        super().__init__()
        self.rho = float(rho)
        self.mean_theta = float(mean_theta)
        self.mean_x = float(mean_x)

    def params(self):
        return {"rho": self.rho, "mean_theta": self.mean_theta, "mean_x": self.mean_x}

    def _sample_prior(self, rng, n):
        return self.mean_theta + rng.generator.standard_normal((n, 1))

    def _simulate(self, theta, rng):
        sd = math.sqrt(1.0 - self.rho**2)
        z = rng.generator.standard_normal(theta.shape)
        return self.mean_x + self.rho * (theta - self.mean_theta) + sd * z

    def prior_log_prob(self, theta):
        return _normal_logpdf(np.atleast_2d(theta) - self.mean_theta, 1.0).sum(axis=1)


class DiscreteUniformMixture(TaskSpec):
    """Joint with X ~ Bernoulli(1/2), Theta | X=0 ~ U[0, 200], Theta | X=1 ~ U[200, 300].

    Written as prior times forward model: the theta marginal is the equal
    mixture of the two uniforms and x = 1[theta >= 200] deterministically.
    """

    name = "counterexample"
    theta_dim = 1
    x_dim = 1

    def __init__(self):
        super().__init__()
        self.theta_low = np.array([0.0])
        self.theta_high = np.array([300.0])

    def _sample_prior(self, rng, n):
        g = rng.generator
        upper = g.random(n) < 0.5
        return np.where(upper, g.uniform(200.0, 300.0, n), g.uniform(0.0, 200.0, n))[:, None]

    def _simulate(self, theta, rng):
        return (theta >= 200.0).astype(float)

    def prior_log_prob(self, theta):
        t = np.atleast_2d(theta)[:, 0]
        dens = np.where((t >= 0) & (t < 200), 0.5 / 200, np.where((t >= 200) & (t <= 300), 0.5 / 100, 0.0))
        with np.errstate(divide="ignore"):
            return np.log(dens)
