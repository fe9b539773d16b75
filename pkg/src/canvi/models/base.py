"""Conditional density interface shared by every candidate approximator."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import DomainError
from ..stats import RngStream


class PosteriorModel:
    """A conditional density q(theta | x) that can be evaluated and sampled.

    Arrays follow numpy broadcasting on their leading axes: ``theta`` has
    shape ``(..., theta_dim)`` and ``x`` has shape ``(..., x_dim)``.  Out of
    support points get log-density ``-inf``.

    Subclasses implement ``_log_prob(theta, x, scale)`` and
    ``_sample(x, rng, n, scale)``, where ``scale`` multiplies the family's
    standard deviations.  Families without a natural spread set
    ``supports_dispersion = False``.
    """

    family: str = ""
    supports_dispersion: bool = False
    theta_dim: int = 0
    x_dim: int = 0

    # -- public API ------------------------------------------------------
    def log_prob(self, theta, x) -> np.ndarray:
        theta, x = self._coerce(theta, x)
        return self._log_prob(theta, x, 1.0)

    def sample(self, x, rng: RngStream, n: Optional[int] = None) -> np.ndarray:
        """Draw from q(. | x).

        Returns shape ``x.shape[:-1] + (n, theta_dim)``, or
        ``x.shape[:-1] + (theta_dim,)`` when ``n`` is None.
        """
        theta, _ = self.sample_with_log_prob(x, rng, n)
        return theta

    def sample_with_log_prob(self, x, rng: RngStream, n: Optional[int] = None):
        """Draws together with their log-densities under the model.

        The log-densities are computed from the draw's latent representation,
        so they stay finite even when a constrained coordinate rounds onto
        the boundary of its support.
        """
        x = self._coerce_x(x)
        theta, logq = self._sample(x, rng, 1 if n is None else int(n), 1.0)
        if n is None:
            return theta[..., 0, :], logq[..., 0]
        return theta, logq

    def density(self, theta, x) -> np.ndarray:
        return np.exp(self.log_prob(theta, x))

    # -- serialization hooks --------------------------------------------
    def to_dict(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorModel":
        raise NotImplementedError

    # -- helpers ---------------------------------------------------------
    def _coerce_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        if x.shape[-1] != self.x_dim:
            raise DomainError(f"x must have trailing dimension {self.x_dim}, got {x.shape}")
        return x

    def _coerce(self, theta, x):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0:
            theta = theta[None]
        if theta.shape[-1] != self.theta_dim:
            raise DomainError(f"theta must have trailing dimension {self.theta_dim}, got {theta.shape}")
        return theta, self._coerce_x(x)

    def _log_prob(self, theta, x, scale: float) -> np.ndarray:
        raise NotImplementedError

    def _sample(self, x, rng: RngStream, n: int, scale: float):
        raise NotImplementedError
