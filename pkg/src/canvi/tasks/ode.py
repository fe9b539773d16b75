"""ODE-driven epidemiology and ecology tasks, integrated with fixed-step RK4."""

from __future__ import annotations

import math

import numpy as np

from ..errors import SimulationError
from .base import TaskSpec
from .simple import _normal_logpdf


def rk4(rhs, y0: np.ndarray, dt: float, n_steps: int, record_every: int = 1, check=None):
    """Classical fourth-order Runge-Kutta on a batch of states.

    ``y0`` has shape (n, k).  Returns the recorded states, shape
    (n_records, n, k), starting with ``y0``.  ``check(y, step)`` runs on every
    recorded state and on the final one, and may raise to abort.
    """
    y = np.array(y0, dtype=float)
    out = [y.copy()]
    half = 0.5 * dt
    for step in range(1, n_steps + 1):
        k1 = rhs(y)
        k2 = rhs(y + half * k1)
        k3 = rhs(y + half * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if step % record_every == 0 or step == n_steps:
            if check is not None:
                check(y, step)
            if step % record_every == 0:
                out.append(y.copy())
    return np.stack(out)


def _lognormal_logpdf(theta, mu, sigma):
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = np.log(theta)
        lp = _normal_logpdf(logt - mu, sigma**2) - logt
    return np.where(theta > 0, lp, -np.inf)


class _ODETask(TaskSpec):
    dt = 0.1
    horizon = 0.0
    n_obs = 10
    prior_mu: np.ndarray
    prior_sigma: np.ndarray

    def __init__(self):
        super().__init__()
        self.theta_low = np.zeros(self.theta_dim)
        self.theta_high = np.full(self.theta_dim, np.inf)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def obs_times(self) -> np.ndarray:
        return np.linspace(self.horizon / self.n_obs, self.horizon, self.n_obs)

    def _sample_prior(self, rng, n):
        return rng.generator.lognormal(self.prior_mu, self.prior_sigma, size=(n, self.theta_dim))

    def prior_log_prob(self, theta):
        theta = np.atleast_2d(theta)
        return _lognormal_logpdf(theta, self.prior_mu, self.prior_sigma).sum(axis=1)

    def trajectory(self, theta) -> np.ndarray:
        """States at every integration step, shape (n_steps + 1, n, k)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return self._integrate(theta, record_every=1)

    def observed_states(self, theta) -> np.ndarray:
        """States at the observation times, shape (n, n_obs, k)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        every = self.n_steps // self.n_obs
        states = self._integrate(theta, record_every=every)[1:]
        return np.transpose(states, (1, 0, 2))

    def _integrate(self, theta, record_every):
        raise NotImplementedError

    @staticmethod
    def _checker(theta, positive: bool):
        def check(y, step):
            bad = ~np.all(np.isfinite(y), axis=1)
            if positive:
                bad |= np.any(y <= 0, axis=1)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise SimulationError(
                    f"invalid ODE state at step {step} for theta={theta[i].tolist()}", theta=theta[i].copy()
                )
        return check


class SIR(_ODETask):
    """Susceptible-infected-recovered epidemic.

    theta = (contact rate, recovery rate) with lognormal priors.  Observations
    are Binomial(1000, I(t)/N) counts at 10 evenly spaced times over 160 days.
    """

    name = "sir"
    theta_dim = 2
    x_dim = 10
    horizon = 160.0
    prior_mu = np.array([math.log(0.4), math.log(1.0 / 8.0)])
    prior_sigma = np.array([0.5, 0.2])

    def __init__(self, population: float = 1e6, initial_infected: float = 1.0, n_trials: int = 1000):
        super().__init__()
        self.population = float(population)
        self.initial_infected = float(initial_infected)
        self.n_trials = int(n_trials)

    def params(self):
        return {"population": self.population, "initial_infected": self.initial_infected, "n_trials": self.n_trials}

    def _integrate(self, theta, record_every):
        beta = theta[:, 0]
        gamma = theta[:, 1]
        N = self.population

        def rhs(y):
            s, i = y[:, 0], y[:, 1]
            infect = beta * s * i / N
            recover = gamma * i
            return np.stack([-infect, infect - recover, recover], axis=1)

        n = theta.shape[0]
        y0 = np.tile([N - self.initial_infected, self.initial_infected, 0.0], (n, 1))
        return rk4(rhs, y0, self.dt, self.n_steps, record_every, check=self._checker(theta, positive=False))

    def _simulate(self, theta, rng):
        infected = self.observed_states(theta)[:, :, 1]
        p = np.clip(infected / self.population, 0.0, 1.0)
        return rng.generator.binomial(self.n_trials, p).astype(float)


class LotkaVolterra(_ODETask):
    """Predator-prey dynamics observed with multiplicative lognormal noise.

    theta = (alpha, beta, gamma, delta).  Both species are observed at 10
    evenly spaced times over a horizon of 20, giving x = (prey_1..10, predator_1..10).
    """

    name = "lotka_volterra"
    theta_dim = 4
    x_dim = 20
    horizon = 20.0
    prior_mu = np.array([-0.125, -3.0, -0.125, -3.0])
    prior_sigma = np.array([0.5, 0.5, 0.5, 0.5])

    def __init__(self, initial_state=(30.0, 1.0), noise_sigma: float = 0.1):
        super().__init__()
        self.initial_state = tuple(float(v) for v in initial_state)
        self.noise_sigma = float(noise_sigma)

    def params(self):
        return {"initial_state": list(self.initial_state), "noise_sigma": self.noise_sigma}

    def _integrate(self, theta, record_every):
        # integrate log-populations: positivity holds by construction and the
        # fixed step stays stable for fast-growing prior draws
        a, b, c, d = theta.T

        def rhs(u):
            prey, pred = np.exp(u[:, 0]), np.exp(u[:, 1])
            return np.stack([a - b * pred, -c + d * prey], axis=1)

        u0 = np.tile(np.log(self.initial_state), (theta.shape[0], 1))
        check = self._checker(theta, positive=False)
        with np.errstate(over="ignore"):
            u = rk4(rhs, u0, self.dt, self.n_steps, record_every, check=check)
            y = np.exp(u)
        positive = self._checker(theta, positive=True)
        for j, state in enumerate(y):
            positive(state, j * record_every)
        return y

    def _simulate(self, theta, rng):
        states = self.observed_states(theta)
        log_mean = np.log(np.concatenate([states[:, :, 0], states[:, :, 1]], axis=1))
        return np.exp(log_mean + self.noise_sigma * rng.generator.standard_normal(log_mean.shape))
