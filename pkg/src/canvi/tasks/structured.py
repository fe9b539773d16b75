"""Tasks whose forward models carry frozen random structure or time series."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError
from ..stats import RngStream
from .base import TaskSpec
from .simple import _BoxUniformPrior, _normal_logpdf

TASK_STREAM = 0xC0FFEE


class SLCPDistractors(_BoxUniformPrior):
    """Simple likelihood, complex posterior, padded with 92 heavy-tailed distractors.

    Four i.i.d. bivariate normal draws fill ``y[0:8]``; ``y[8:100]`` come from an
    equal mixture of 20 multivariate Student-t (2 dof) laws.  The output is a
    fixed permutation of ``y``.  Mixture locations, scale factors and the
    permutation are drawn once from ``seed``.
    """

    name = "slcp_distractors"
    theta_dim = 5
    x_dim = 100
    low, high = -3.0, 3.0
    n_informative = 8
    n_components = 20
    dof = 2.0

    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = int(seed)
        g = RngStream(self.seed, (TASK_STREAM, 1)).generator
        nd = self.x_dim - self.n_informative
        self.mix_means = 15.0 * g.standard_normal((self.n_components, nd))
        scales = 3.0 * g.standard_normal((self.n_components, nd, nd))
        scales = np.tril(scales, -1)
        diag = 3.0 * np.exp(g.standard_normal((self.n_components, nd)))
        idx = np.arange(nd)
        scales[:, idx, idx] = diag
        self.mix_scale_tril = scales
        self.permutation = g.permutation(self.x_dim)

    def params(self):
        return {"seed": self.seed}

    def unpermute(self, x) -> np.ndarray:
        """Recover ``y`` from an observation (inverse of the fixed reordering)."""
        x = np.atleast_2d(x)
        y = np.empty_like(x)
        y[:, self.permutation] = x
        return y

    def _simulate(self, theta, rng):
        g = rng.generator
        n = theta.shape[0]
        s1 = theta[:, 2] ** 2
        s2 = theta[:, 3] ** 2
        rho = np.tanh(theta[:, 4])
        z = g.standard_normal((n, 4, 2))
        y1 = theta[:, None, 0] + s1[:, None] * z[:, :, 0]
        y2 = theta[:, None, 1] + s2[:, None] * (rho[:, None] * z[:, :, 0] + np.sqrt(1 - rho**2)[:, None] * z[:, :, 1])
        informative = np.stack([y1, y2], axis=2).reshape(n, 8)

        comp = g.integers(0, self.n_components, size=n)
        nd = self.x_dim - self.n_informative
        zt = g.standard_normal((n, nd))
        w = g.chisquare(self.dof, size=n)
        L = self.mix_scale_tril[comp]
        dist = self.mix_means[comp] + np.einsum("nij,nj->ni", L, zt) / np.sqrt(w / self.dof)[:, None]
        y = np.hstack([informative, dist])
        return y[:, self.permutation]


class BernoulliGLMRaw(TaskSpec):
    """Bernoulli GLM with raw spike-train observations.

    theta = (beta, f_1..f_9): beta ~ N(0, 2), f ~ N(0, (F^T F)^-1) with the
    banded second-difference matrix F.  Each of the 100 bins fires with
    probability sigmoid(v_i . f + beta), where v_i holds the 9 most recent
    values of a frozen white-noise stimulus.
    """

    name = "bernoulli_glm_raw"
    theta_dim = 10
    x_dim = 100
    filter_len = 9
    beta_var = 2.0

    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = int(seed)
        d = self.filter_len
        F = np.zeros((d, d))
        for i in range(d):
            F[i, i] = 1.0 + math.sqrt(i / 9.0)
            if i >= 1:
                F[i, i - 1] = -2.0
            if i >= 2:
                F[i, i - 2] = 1.0
        self.F = F
        g = RngStream(self.seed, (TASK_STREAM, 2)).generator
        self.stimulus = g.standard_normal(self.x_dim)
        V = np.zeros((self.x_dim, d))
        for lag in range(d):
            V[lag:, lag] = self.stimulus[: self.x_dim - lag]
        self.design = V

    def params(self):
        return {"seed": self.seed}

    def _sample_prior(self, rng, n):
        g = rng.generator
        beta = math.sqrt(self.beta_var) * g.standard_normal((n, 1))
        z = g.standard_normal((n, self.filter_len))
        f = np.linalg.solve(self.F, z.T).T
        return np.hstack([beta, f])

    def prior_log_prob(self, theta):
        theta = np.atleast_2d(theta)
        lp = _normal_logpdf(theta[:, 0], self.beta_var)
        Ff = theta[:, 1:] @ self.F.T
        logdet = np.sum(np.log(np.diag(self.F)))
        lp = lp - 0.5 * np.sum(Ff**2, axis=1) + logdet - 0.5 * self.filter_len * math.log(2 * math.pi)
        return lp

    def _simulate(self, theta, rng):
        eta = theta[:, 1:] @ self.design.T + theta[:, :1]
        p = 0.5 * (1.0 + np.tanh(0.5 * eta))
        return (rng.generator.random(p.shape) < p).astype(float)


class ARCH(TaskSpec):
    """Lag-one ARCH series of length 100 with e_0 = y_0 = 0.

    theta_1 ~ U(-1, 1) is the autoregressive coefficient and theta_2 ~ U(0, 1)
    scales the conditional variance 0.2 + theta_2 e_{t-1}^2.
    """

    name = "arch"
    theta_dim = 2
    x_dim = 100
    base_var = 0.2

    def __init__(self):
        super().__init__()
        self.theta_low = np.array([-1.0, 0.0])
        self.theta_high = np.array([1.0, 1.0])

    def _sample_prior(self, rng, n):
        return rng.generator.uniform(self.theta_low, self.theta_high, size=(n, 2))

    def prior_log_prob(self, theta):
        theta = np.atleast_2d(theta)
        inside = np.all((theta >= self.theta_low) & (theta <= self.theta_high), axis=1)
        return np.where(inside, -math.log(2.0), -np.inf)

    def _simulate(self, theta, rng):
        xi = rng.generator.standard_normal((theta.shape[0], self.x_dim))
        return arch_series(theta, xi, self.base_var)


def arch_series(theta, xi, base_var: float = 0.2) -> np.ndarray:
    """Run the ARCH recursion on a given innovation array ``xi`` of shape (n, T)."""
    theta = np.atleast_2d(theta)
    xi = np.atleast_2d(xi)
    n, T = xi.shape
    y = np.empty((n, T))
    y_prev = np.zeros(n)
    e_prev = np.zeros(n)
    t1, t2 = theta[:, 0], theta[:, 1]
    for t in range(T):
        e = xi[:, t] * np.sqrt(base_var + t2 * e_prev**2)
        y_prev = t1 * y_prev + e
        y[:, t] = y_prev
        e_prev = e
    return y


def arch_log_likelihood(theta, y_series, base_var: float = 0.2) -> float:
    """Exact log p(y_1:T | theta) by unrolling e_t = y_t - theta_1 y_{t-1}."""
    t1, t2 = float(theta[0]), float(theta[1])
    y = np.asarray(y_series, dtype=float)
    y_lag = np.concatenate([[0.0], y[:-1]])
    e = y - t1 * y_lag
    e_lag = np.concatenate([[0.0], e[:-1]])
    var = base_var + t2 * e_lag**2
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise DomainError("conditional variance must be positive")
    return float(np.sum(-0.5 * (np.log(2 * math.pi * var) + e**2 / var)))
