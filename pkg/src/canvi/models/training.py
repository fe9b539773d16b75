"""Forward-KL amortized training on fresh simulations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import DomainError, TrainingError
from ..stats import RngStream
from ..tasks import TaskSpec, sample_joint
from .mdn import MixtureDensityNetwork


class Adam:
    """Adam moment estimates over a flat parameter vector."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise DomainError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    model: MixtureDensityNetwork
    losses: np.ndarray
    checkpoints: list = field(default_factory=list)  # (step, model snapshot)


def train_favi(model: MixtureDensityNetwork, task: TaskSpec, steps: int, rng: RngStream, batch: int = 256,
               lr: float = 1e-3, checkpoint_every: Optional[int] = None, block_steps: int = 50,
               on_checkpoint: Optional[Callable[[int, MixtureDensityNetwork], None]] = None) -> TrainResult:
    """Minimize the mean negative log-density over fresh joint draws.

    Every step sees ``batch`` new (theta, x) pairs.  Pairs are simulated in
    blocks of ``batch * block_steps`` drawn from ``rng.spawn(block_index)``
    so that the forward model runs vectorized.  The input model is left
    untouched; training happens on a copy.

    Snapshots are taken at step 0, every ``checkpoint_every`` steps and at
    the final step.

    Raises
    ------
    TrainingError
        When the loss or its gradient becomes non-finite.
    """
    if steps < 0:
        raise DomainError("steps must be >= 0")
    if batch < 1 or block_steps < 1:
        raise DomainError("batch and block_steps must be >= 1")
    model = model.copy()
    opt = Adam(lr)
    losses = np.empty(steps)
    checkpoints = []

    def snapshot(step):
        snap = model.copy()
        checkpoints.append((step, snap))
        if on_checkpoint is not None:
            on_checkpoint(step, snap)

    if checkpoint_every:
        snapshot(0)
    params = model.get_flat()
    data = None
    for step in range(steps):
        j = step % block_steps
        if j == 0:
            data = sample_joint(task, batch * block_steps, rng.spawn(step // block_steps))
        sl = slice(j * batch, (j + 1) * batch)
        loss, grad = model.loss_and_grad(data.theta[sl], data.x[sl])
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingError(f"non-finite loss at step {step + 1}", step=step + 1)
        losses[step] = loss
        params = opt.step(params, grad)
        model.set_flat(params)
        done = step + 1
        if checkpoint_every and (done % checkpoint_every == 0 or done == steps):
            snapshot(done)
    return TrainResult(model, losses, checkpoints)


def smoothed(values, window: int = 100) -> np.ndarray:
    """Non-overlapping window means (a trailing partial window is dropped)."""
    values = np.asarray(values, dtype=float)
    n = values.size // window
    return values[: n * window].reshape(n, window).mean(axis=1)
