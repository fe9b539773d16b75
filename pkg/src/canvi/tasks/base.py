"""Task interface and joint datasets."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DomainError
from ..stats import RngStream

ROLES = ("train", "calibration", "test", "recalibration")


class TaskSpec:
    """A generative task: a prior over theta and a forward model for x.

    Subclasses set ``name``, ``theta_dim``, ``x_dim``, ``theta_low`` and
    ``theta_high`` (``-inf``/``inf`` for unbounded coordinates) and implement
    ``_sample_prior``, ``_simulate`` and ``prior_log_prob`` on 2-D arrays.
    Instances are treated as immutable once constructed.
    """

    name: str = ""
    theta_dim: int = 0
    x_dim: int = 0

    def __init__(self):
        self.theta_low = np.full(self.theta_dim, -np.inf)
        self.theta_high = np.full(self.theta_dim, np.inf)

    # -- support -------------------------------------------------------
    @property
    def theta_support(self) -> list[tuple[float, float] | str]:
        out = []
        for lo, hi in zip(self.theta_low, self.theta_high):
            out.append((float(lo), float(hi)) if np.isfinite(lo) and np.isfinite(hi) else "unbounded")
        return out

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.theta_low)) and np.all(np.isfinite(self.theta_high)))

    def support_kind(self) -> list[str]:
        """Per-dimension support: ``interval``, ``positive`` or ``real``."""
        kinds = []
        for lo, hi in zip(self.theta_low, self.theta_high):
            if np.isfinite(lo) and np.isfinite(hi):
                kinds.append("interval")
            elif lo == 0 and not np.isfinite(hi):
                kinds.append("positive")
            else:
                kinds.append("real")
        return kinds

    def in_support(self, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        inside = (theta >= self.theta_low) & (theta <= self.theta_high)
        return np.all(inside, axis=1)

    def params(self) -> dict:
        """Constructor arguments that reproduce this task."""
        return {}

    # -- sampling --------------------------------------------------------
    def sample_prior(self, rng: RngStream, n: Optional[int] = None) -> np.ndarray:
        theta = self._sample_prior(rng, 1 if n is None else int(n))
        return theta[0] if n is None else theta

    def simulate(self, theta, rng: RngStream) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        theta2 = np.atleast_2d(theta)
        if theta2.shape[1] != self.theta_dim:
            raise DomainError(f"{self.name}: theta must have {self.theta_dim} columns")
        x = self._simulate(theta2, rng)
        return x[0] if single else x

    def prior_log_prob(self, theta) -> np.ndarray:
        raise NotImplementedError

    def _sample_prior(self, rng: RngStream, n: int) -> np.ndarray:
        raise NotImplementedError

    def _simulate(self, theta: np.ndarray, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


@dataclass
class JointDataset:
    """Ordered (theta, x) pairs drawn i.i.d. from prior times forward model."""

    theta: np.ndarray
    x: np.ndarray
    role: str = "train"
    task: str = ""
    seed: int = 0
    stream_id: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if self.theta.shape[0] != self.x.shape[0]:
            raise DomainError("theta and x must have the same number of rows")
        if self.role not in ROLES:
            raise DomainError(f"unknown dataset role {self.role!r}")
        self.stream_id = tuple(int(k) for k in self.stream_id)

    def __len__(self):
        return self.theta.shape[0]

    @property
    def theta_dim(self) -> int:
        return self.theta.shape[1]

    @property
    def x_dim(self) -> int:
        return self.x.shape[1]

    def fingerprint(self) -> str:
        """SHA-256 over dimensions and the raw little-endian float64 payload."""
        h = hashlib.sha256()
        h.update(f"{len(self)}:{self.theta_dim}:{self.x_dim}".encode())
        h.update(np.ascontiguousarray(self.theta, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.x, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_csv(self, path) -> None:
        path = Path(path)
        stream = ":".join(str(k) for k in self.stream_id)
        cols = [f"theta_{i}" for i in range(self.theta_dim)] + [f"x_{j}" for j in range(self.x_dim)]
        rows = np.hstack([self.theta, self.x])
        with open(path, "w", newline="") as fh:
            fh.write(
                f"# task={self.task} seed={self.seed} role={self.role} "
                f"theta_dim={self.theta_dim} x_dim={self.x_dim} stream={stream}\n"
            )
            fh.write(",".join(cols) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "JointDataset":
        with open(path) as fh:
            meta_line = fh.readline()
            if not meta_line.startswith("#"):
                raise DomainError(f"{path}: missing dataset header line")
            meta = dict(tok.split("=", 1) for tok in meta_line[1:].split())
            fh.readline()
            d, p = int(meta["theta_dim"]), int(meta["x_dim"])
            data = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
        arr = np.array(data, dtype=float).reshape(-1, d + p)
        stream = tuple(int(k) for k in meta.get("stream", "").split(":") if k)
        return cls(arr[:, :d], arr[:, d:], role=meta["role"], task=meta["task"],
                   seed=int(meta["seed"]), stream_id=stream)


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.17g" % v


def sample_joint(task: TaskSpec, n: int, rng: RngStream, role: str = "train") -> JointDataset:
    """Draw ``n`` i.i.d. pairs; theta from ``rng.spawn(0)``, x from ``rng.spawn(1)``."""
    if n < 1:
        raise DomainError("sample_joint needs n >= 1")
    theta = task.sample_prior(rng.spawn(0), n)
    x = task.simulate(theta, rng.spawn(1))
    return JointDataset(theta, x, role=role, task=task.name, seed=rng.seed, stream_id=rng.key)
