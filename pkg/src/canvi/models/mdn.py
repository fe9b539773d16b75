"""Mixture density network with analytic gradients.

The network maps a standardized observation through tanh hidden layers to
the logits, means and log standard deviations of a diagonal Gaussian
mixture.  The mixture lives on a standardized unconstrained copy of theta:
interval coordinates go through a logit, positive ones through a log, and
the change-of-variables terms are added back so ``log_prob`` is a density
in the original theta coordinates.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp, log_softmax, softmax

from ..errors import DomainError
from ..stats import RngStream
from ..tasks import TaskSpec, sample_joint
from .base import PosteriorModel

_LOG2PI = math.log(2.0 * math.pi)

_KINDS = ("real", "interval", "positive")


class SupportTransform:
    """Per-coordinate bijection from the theta support onto the real line.

    Parameters
    ----------
    kinds : sequence of str
        ``"real"``, ``"interval"`` or ``"positive"`` per coordinate.
    low, high : array_like
        Bounds, used by interval coordinates only.
    """

    def __init__(self, kinds: Sequence[str], low=None, high=None):
        self.kinds = [str(k) for k in kinds]
        for k in self.kinds:
            if k not in _KINDS:
                raise DomainError(f"unknown support kind {k!r}")
        d = len(self.kinds)
        self.low = np.zeros(d) if low is None else np.asarray(low, dtype=float).copy()
        self.high = np.ones(d) if high is None else np.asarray(high, dtype=float).copy()
        self.is_interval = np.array([k == "interval" for k in self.kinds])
        self.is_positive = np.array([k == "positive" for k in self.kinds])
        self.low = np.where(self.is_interval, self.low, 0.0)
        self.high = np.where(self.is_interval, self.high, 1.0)
        if np.any(self.high[self.is_interval] <= self.low[self.is_interval]):
            raise DomainError("interval bounds need high > low")
        self.width = self.high - self.low

    @classmethod
    def for_task(cls, task: TaskSpec) -> "SupportTransform":
        return cls(task.support_kind(), np.where(np.isfinite(task.theta_low), task.theta_low, 0.0),
                   np.where(np.isfinite(task.theta_high), task.theta_high, 1.0))

    @property
    def identity(self) -> bool:
        return not (self.is_interval.any() or self.is_positive.any())

    def forward(self, theta):
        """Map theta to u; returns (u, log|du/dtheta| summed, inside-support mask)."""
        theta = np.asarray(theta, dtype=float)
        if self.identity:
            return theta, np.zeros(theta.shape[:-1]), np.ones(theta.shape[:-1], dtype=bool)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (theta - self.low) / self.width
            inside_iv = (t > 0) & (t < 1)
            inside_pos = theta > 0
            u_iv = np.log(t) - np.log1p(-t)
            jac_iv = -np.log(theta - self.low) - np.log(self.high - theta) + np.log(self.width)
            u_pos = np.log(theta)
            jac_pos = -np.log(theta)
        u = np.where(self.is_interval, u_iv, np.where(self.is_positive, u_pos, theta))
        inside = np.where(self.is_interval, inside_iv, np.where(self.is_positive, inside_pos, True))
        jac = np.where(self.is_interval, jac_iv, np.where(self.is_positive, jac_pos, 0.0))
        ok = np.all(inside, axis=-1)
        logjac = np.where(ok, np.sum(np.where(inside, jac, 0.0), axis=-1), -np.inf)
        u = np.where(inside, u, 0.0)
        return u, logjac, ok

    def inverse(self, u):
        """Map u back to theta; returns (theta, log|dtheta/du| summed)."""
        u = np.asarray(u, dtype=float)
        if self.identity:
            return u, np.zeros(u.shape[:-1])
        # log sigmoid(u) + log sigmoid(-u), stable for large |u|
        log_dsig = -np.logaddexp(0.0, -u) - np.logaddexp(0.0, u)
        with np.errstate(over="ignore"):
            theta_iv = self.low + self.width * (0.5 * (1.0 + np.tanh(0.5 * u)))
            theta_pos = np.exp(u)
        theta = np.where(self.is_interval, theta_iv, np.where(self.is_positive, theta_pos, u))
        jac = np.where(self.is_interval, np.log(self.width) + log_dsig, np.where(self.is_positive, u, 0.0))
        return theta, np.sum(jac, axis=-1)

    def to_dict(self):
        return {"kinds": self.kinds, "low": self.low.tolist(), "high": self.high.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kinds"], d["low"], d["high"])


class MixtureDensityNetwork(PosteriorModel):
    """Diagonal Gaussian mixture whose parameters are an MLP of x.

    Parameters
    ----------
    theta_dim, x_dim : int
    n_components : int
        Mixture size K.
    hidden : sequence of int
        Hidden layer widths (tanh).
    transform : SupportTransform, optional
        Defaults to the identity on every coordinate.
    x_loc, x_scale, u_loc, u_scale : array_like, optional
        Standardization of x and of the unconstrained theta.
    """

    family = "mdn"
    supports_dispersion = True

    def __init__(self, theta_dim: int, x_dim: int, n_components: int = 10, hidden=(64, 64),
                 transform: Optional[SupportTransform] = None, x_loc=None, x_scale=None,
                 u_loc=None, u_scale=None):
        if n_components < 1:
            raise DomainError("need at least one mixture component")
        self.theta_dim = int(theta_dim)
        self.x_dim = int(x_dim)
        self.n_components = int(n_components)
        self.hidden = tuple(int(h) for h in hidden)
        self.transform = transform or SupportTransform(["real"] * self.theta_dim)
        if len(self.transform.kinds) != self.theta_dim:
            raise DomainError("transform dimension does not match theta_dim")
        self.x_loc = np.zeros(x_dim) if x_loc is None else np.asarray(x_loc, dtype=float).copy()
        self.x_scale = np.ones(x_dim) if x_scale is None else np.asarray(x_scale, dtype=float).copy()
        self.u_loc = np.zeros(theta_dim) if u_loc is None else np.asarray(u_loc, dtype=float).copy()
        self.u_scale = np.ones(theta_dim) if u_scale is None else np.asarray(u_scale, dtype=float).copy()
        sizes = [self.x_dim, *self.hidden, self.n_out]
        self.params = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            self.params += [np.zeros((a, b)), np.zeros(b)]

    @property
    def n_out(self) -> int:
        return self.n_components * (1 + 2 * self.theta_dim)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    # -- construction ------------------------------------------------------
    @classmethod
    def for_task(cls, task: TaskSpec, rng: RngStream, n_components: int = 10, hidden=(64, 64),
                 n_pilot: int = 10_000, transform: bool = True) -> "MixtureDensityNetwork":
        """Build and initialize a network for ``task``.

        Standardization statistics come from ``n_pilot`` joint draws on
        ``rng.spawn(0)``; initial weights come from ``rng.spawn(1)``.
        """
        tr = SupportTransform.for_task(task) if transform else SupportTransform(["real"] * task.theta_dim)
        pilot = sample_joint(task, n_pilot, rng.spawn(0))
        x_loc, x_scale = _location_scale(pilot.x)
        theta = pilot.theta
        if tr.is_interval.any():
            # keep prior draws that land exactly on a bound away from infinities
            eps = 1e-9 * tr.width
            theta = np.where(tr.is_interval, np.clip(theta, tr.low + eps, tr.high - eps), theta)
        u, _, _ = tr.forward(theta)
        u_loc, u_scale = _location_scale(u)
        model = cls(task.theta_dim, task.x_dim, n_components, hidden, tr, x_loc, x_scale, u_loc, u_scale)
        model.initialize(rng.spawn(1))
        return model

    def initialize(self, rng: RngStream, mean_spread: float = 0.5, head_gain: float = 0.1) -> None:
        """Glorot-uniform hidden weights, near-prior output head.

        Mixture means start as small uniform noise around the standardized
        prior mean (zero), log standard deviations at zero and logits at zero.
        """
        g = rng.generator
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            W = self.params[2 * i]
            limit = math.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            if i == n_layers - 1:
                limit *= head_gain
            self.params[2 * i] = g.uniform(-limit, limit, W.shape)
            self.params[2 * i + 1] = np.zeros(W.shape[1])
        K, d = self.n_components, self.theta_dim
        bias = np.zeros(self.n_out)
        bias[K:K + K * d] = g.uniform(-mean_spread, mean_spread, K * d)
        self.params[-1] = bias

    def copy(self) -> "MixtureDensityNetwork":
        m = MixtureDensityNetwork(self.theta_dim, self.x_dim, self.n_components, self.hidden,
                                  self.transform, self.x_loc, self.x_scale, self.u_loc, self.u_scale)
        m.params = [p.copy() for p in self.params]
        return m

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise DomainError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for i, p in enumerate(self.params):
            self.params[i] = flat[pos:pos + p.size].reshape(p.shape).copy()
            pos += p.size

    # -- network -----------------------------------------------------------
    def _forward(self, x2):
        """x2: (m, x_dim) raw observations -> (out, activations)."""
        h = (x2 - self.x_loc) / self.x_scale
        acts = [h]
        n_layers = len(self.params) // 2
        for i in range(n_layers - 1):
            h = np.tanh(h @ self.params[2 * i] + self.params[2 * i + 1])
            acts.append(h)
        out = h @ self.params[-2] + self.params[-1]
        return out, acts

    def _split(self, out):
        K, d = self.n_components, self.theta_dim
        lead = out.shape[:-1]
        logits = out[..., :K]
        means = out[..., K:K + K * d].reshape(lead + (K, d))
        log_std = out[..., K + K * d:].reshape(lead + (K, d))
        return logits, means, log_std

    def mixture_params(self, x):
        """Mixture weights, means and standard deviations in standardized u-space."""
        x = self._coerce_x(x)
        out, _ = self._forward(x.reshape(-1, self.x_dim))
        logits, means, log_std = self._split(out.reshape(x.shape[:-1] + (self.n_out,)))
        return softmax(logits, axis=-1), means, np.exp(log_std)

    def _heads(self, x):
        out, _ = self._forward(x.reshape(-1, self.x_dim))
        return self._split(out.reshape(x.shape[:-1] + (self.n_out,)))

    @staticmethod
    def _mixture_logpdf(z, logits, means, log_std):
        # z: (..., d); heads broadcast against z[..., None, :]
        w = (z[..., None, :] - means) * np.exp(-log_std)
        comp = -0.5 * np.sum(w * w, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * z.shape[-1] * _LOG2PI
        return logsumexp(log_softmax(logits, axis=-1) + comp, axis=-1)

    # -- density -------------------------------------------------------------
    def _log_prob(self, theta, x, scale):
        logits, means, log_std = self._heads(x)
        log_std = log_std + math.log(scale)
        u, logjac, inside = self.transform.forward(theta)
        z = (u - self.u_loc) / self.u_scale
        lq = self._mixture_logpdf(z, logits, means, log_std)
        lq = lq - np.sum(np.log(self.u_scale)) + logjac
        return np.where(inside, lq, -np.inf)

    def _sample(self, x, rng, n, scale):
        logits, means, log_std = self._heads(x)
        log_std = log_std + math.log(scale)
        lead = x.shape[:-1]
        g = rng.generator
        cdf = np.cumsum(softmax(logits, axis=-1), axis=-1)
        r = g.random(lead + (n,))
        comp = np.sum(r[..., None] > cdf[..., None, :-1], axis=-1)
        idx = comp[..., None, None]
        mu = np.take_along_axis(means[..., None, :, :], idx, axis=-2)[..., 0, :]
        ls = np.take_along_axis(log_std[..., None, :, :], idx, axis=-2)[..., 0, :]
        eps = g.standard_normal(lead + (n, self.theta_dim))
        z = mu + np.exp(ls) * eps
        lq = self._mixture_logpdf(z, logits[..., None, :], means[..., None, :, :], log_std[..., None, :, :])
        u = self.u_loc + self.u_scale * z
        theta, log_dtheta = self.transform.inverse(u)
        lq = lq - np.sum(np.log(self.u_scale)) - log_dtheta
        return theta, lq

    # -- training objective ----------------------------------------------------
    def loss_and_grad(self, theta, x):
        """Mean negative log-density over a batch and its gradient (flat).

        ``theta`` is (n, theta_dim) inside the support, ``x`` is (n, x_dim).
        """
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        n = theta.shape[0]
        K, d = self.n_components, self.theta_dim
        u, logjac, inside = self.transform.forward(theta)
        if not inside.all():
            raise DomainError("training theta outside the model support")
        z = (u - self.u_loc) / self.u_scale
        out, acts = self._forward(x)
        logits, means, log_std = self._split(out)
        inv_std = np.exp(-log_std)
        w = (z[:, None, :] - means) * inv_std
        log_pi = log_softmax(logits, axis=-1)
        comp = -0.5 * np.sum(w * w, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * d * _LOG2PI
        joint = log_pi + comp
        ll = logsumexp(joint, axis=-1)
        loss = -float(np.mean(ll - np.sum(np.log(self.u_scale)) + logjac))

        resp = np.exp(joint - ll[:, None])
        g_logits = resp - np.exp(log_pi)
        g_means = resp[:, :, None] * w * inv_std
        g_logstd = resp[:, :, None] * (w * w - 1.0)
        d_out = -np.concatenate([g_logits, g_means.reshape(n, K * d), g_logstd.reshape(n, K * d)], axis=1) / n

        grads = [None] * len(self.params)
        n_layers = len(self.params) // 2
        delta = d_out
        for i in range(n_layers - 1, -1, -1):
            a = acts[i]
            grads[2 * i] = a.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[2 * i].T) * (1.0 - a * a)
        return loss, np.concatenate([g.ravel() for g in grads])

    def loss(self, theta, x) -> float:
        return -float(np.mean(self.log_prob(theta, x)))

    # -- serialization -----------------------------------------------------------
    def to_dict(self):
        return {
            "theta_dim": self.theta_dim,
            "x_dim": self.x_dim,
            "n_components": self.n_components,
            "hidden": list(self.hidden),
            "activation": "tanh",
            "transform": self.transform.to_dict(),
            "x_loc": self.x_loc.tolist(),
            "x_scale": self.x_scale.tolist(),
            "u_loc": self.u_loc.tolist(),
            "u_scale": self.u_scale.tolist(),
            "params": self.get_flat().tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        m = cls(d["theta_dim"], d["x_dim"], d["n_components"], d["hidden"],
                SupportTransform.from_dict(d["transform"]), d["x_loc"], d["x_scale"], d["u_loc"], d["u_scale"])
        m.set_flat(d["params"])
        return m


def _location_scale(a):
    loc = a.mean(axis=0)
    scale = a.std(axis=0)
    scale = np.where(scale > 1e-8 * np.maximum(1.0, np.abs(loc)), scale, 1.0)
    return loc, scale
