"""Region-size (inverse efficiency) estimators and their closed-form references.

A calibrated region is ``{theta : -log q(theta | x) <= log_threshold}``.
Its Lebesgue measure is estimated either by importance weighting draws
from q itself (``iw_mc``) or by counting points of a regular grid
(``grid``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .conformal import CalibratedPredictor, calibrate
from .errors import DomainError
from .models import ConditionalLinearGaussian, ConditionalUniform, PosteriorModel
from .stats import RngStream, std_normal_quantile
from .tasks import BivariateGaussian, DiscreteUniformMixture, JointDataset, TaskSpec, sample_joint

MAX_GRID_DIM = 3

# grid points evaluated per model call
_GRID_CHUNK = 250_000


class UnsupportedDimensionError(DomainError):
    """Grid estimation was asked for more dimensions than it can enumerate."""


def _log_threshold(threshold) -> float:
    if isinstance(threshold, CalibratedPredictor):
        return threshold.log_threshold
    t = float(threshold)
    if math.isnan(t):
        raise DomainError("threshold must not be NaN")
    if t <= 0:
        return -math.inf
    return math.log(t)


@dataclass
class EfficiencyEstimate:
    """Mean region size over test points with per-point detail."""

    mean: float
    values: np.ndarray
    se: float
    kind: str
    point_se: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


# -- importance-weighted Monte Carlo -------------------------------------------------
def _iw_point(model: PosteriorModel, log_thr: float, x, S: int, rng: RngStream):
    _, lq = model.sample_with_log_prob(np.asarray(x, dtype=float), rng, S)
    keep = -lq <= log_thr
    with np.errstate(over="ignore"):
        w = np.where(keep, np.exp(-lq), 0.0)
    se = float(w.std(ddof=1) / math.sqrt(S)) if S > 1 else math.nan
    return float(w.mean()), se


def region_size_iw(model: PosteriorModel, threshold, x, S: int, rng: RngStream, return_se: bool = False):
    """Importance-weighted estimate of the measure of the region at ``x``.

    Averages ``1/q(theta_j | x) * 1[1/q(theta_j | x) <= threshold]`` over S
    draws from the model.  ``threshold`` is a raw score bound or a
    :class:`CalibratedPredictor`.
    """
    if S < 1:
        raise DomainError("S must be >= 1")
    mean, se = _iw_point(model, _log_threshold(threshold), x, S, rng)
    return (mean, se) if return_se else mean


def inverse_efficiency(model: PosteriorModel, threshold, test: JointDataset, S: int,
                       rng: RngStream) -> EfficiencyEstimate:
    """Mean importance-weighted region size over the observations of ``test``.

    Point ``i`` draws from ``rng.spawn(i)``, so candidates evaluated with
    the same stream share their per-point randomness.
    """
    if len(test) < 1:
        raise DomainError("test set is empty")
    if S < 1:
        raise DomainError("S must be >= 1")
    log_thr = _log_threshold(threshold)
    vals = np.empty(len(test))
    pse = np.empty(len(test))
    for i, x in enumerate(test.x):
        vals[i], pse[i] = _iw_point(model, log_thr, x, S, rng.spawn(i))
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float(pse[0])
    return EfficiencyEstimate(float(vals.mean()), vals, se, "iw_mc", pse)


# -- grid ------------------------------------------------------------------------
@dataclass(frozen=True)
class GridSpec:
    """Regular cell-centred grid over a box; ``counts`` cells per dimension."""

    low: tuple
    high: tuple
    counts: tuple

    def __post_init__(self):
        low = tuple(float(v) for v in np.atleast_1d(self.low))
        high = tuple(float(v) for v in np.atleast_1d(self.high))
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if len(counts) == 1 and len(low) > 1:
            counts = counts * len(low)
        if not (len(low) == len(high) == len(counts)):
            raise DomainError("grid bounds and counts must have equal length")
        if any(c < 2 for c in counts):
            raise DomainError("grid needs at least 2 points per dimension")
        if any(not (math.isfinite(a) and math.isfinite(b) and b > a) for a, b in zip(low, high)):
            raise DomainError("grid bounds must be finite with high > low")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def for_task(cls, task: TaskSpec, n: int = 100) -> "GridSpec":
        if not task.bounded:
            raise DomainError(f"{task.name} has unbounded support; give explicit grid bounds")
        return cls(tuple(task.theta_low), tuple(task.theta_high), (n,) * task.theta_dim)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in zip(self.low, self.high)]))

    @property
    def cell_volume(self) -> float:
        return self.volume / float(np.prod(self.counts))

    def axes(self) -> list:
        return [a + (b - a) * (np.arange(n) + 0.5) / n for a, b, n in zip(self.low, self.high, self.counts)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def region_sizes_grid(model: PosteriorModel, threshold, xs, grid: GridSpec) -> np.ndarray:
    """Grid-counted region size for each row of ``xs``."""
    if grid.dim > MAX_GRID_DIM:
        raise UnsupportedDimensionError(f"grid estimation supports at most {MAX_GRID_DIM} dimensions")
    if grid.dim != model.theta_dim:
        raise DomainError("grid dimension differs from theta_dim")
    log_thr = _log_threshold(threshold)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    pts = grid.points()
    counts = np.zeros(xs.shape[0], dtype=np.int64)
    if log_thr == math.inf:
        counts[:] = pts.shape[0]
    else:
        rows = max(1, _GRID_CHUNK // pts.shape[0])
        for start in range(0, xs.shape[0], rows):
            xb = xs[start:start + rows]
            lq = model.log_prob(pts[None, :, :], xb[:, None, :])
            counts[start:start + rows] = np.count_nonzero(-lq <= log_thr, axis=1)
    # a fully covered grid reports the box volume itself, free of rounding
    return np.where(counts == pts.shape[0], grid.volume, counts * grid.cell_volume)


def region_size_grid(model: PosteriorModel, threshold, x, grid: GridSpec) -> float:
    """Cell volume times the number of grid points whose score is within the threshold."""
    return float(region_sizes_grid(model, threshold, np.atleast_1d(np.asarray(x, dtype=float))[None, :], grid)[0])


def region_size_log_grid(model: PosteriorModel, threshold, x, log_grid: GridSpec) -> float:
    """Region size in theta for a positive parameter, counted on a grid over log(theta).

    Each cell contributes its volume times the Jacobian ``exp(sum(u))`` at its
    centre.  Regions of positive-support models often span several orders of
    magnitude in theta while staying smooth in log(theta).
    """
    if log_grid.dim > MAX_GRID_DIM:
        raise UnsupportedDimensionError(f"grid estimation supports at most {MAX_GRID_DIM} dimensions")
    if log_grid.dim != model.theta_dim:
        raise DomainError("grid dimension differs from theta_dim")
    log_thr = _log_threshold(threshold)
    u = log_grid.points()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    inside = -model.log_prob(np.exp(u), x) <= log_thr
    return float(np.sum(np.exp(u[inside].sum(axis=1))) * log_grid.cell_volume)


def inverse_efficiency_grid(model: PosteriorModel, threshold, test: JointDataset, grid: GridSpec) -> EfficiencyEstimate:
    vals = region_sizes_grid(model, threshold, test.x, grid)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return EfficiencyEstimate(float(vals.mean()), vals, se, "grid")


# -- bivariate Gaussian closed forms -----------------------------------------------
def _check_gaussian_args(rho, alpha):
    if not abs(rho) < 1:
        raise DomainError("|rho| must be < 1")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")


def gaussian_analytic_threshold(rho: float, phi: float, alpha: float) -> float:
    """Population conformal threshold of the candidate N(phi x, 1 - rho^2)."""
    _check_gaussian_args(rho, alpha)
    z = std_normal_quantile(1 - alpha / 2)
    v = 1 - rho**2
    return math.sqrt(2 * math.pi * v * math.exp((phi**2 + 1 - 2 * phi * rho) / v * z * z))


def gaussian_analytic_length(rho: float, phi: float, alpha: float) -> float:
    """Interval length of the calibrated N(phi x, 1 - rho^2) candidate (same for every x)."""
    _check_gaussian_args(rho, alpha)
    return 2 * math.sqrt(phi**2 + 1 - 2 * phi * rho) * std_normal_quantile(1 - alpha / 2)


def gaussian_candidate(rho: float, phi: float, mean_theta: float = 0.0, mean_x: float = 0.0) -> ConditionalLinearGaussian:
    """N(mean_theta + phi (x - mean_x), 1 - rho^2)."""
    return ConditionalLinearGaussian([[phi]], [mean_theta - phi * mean_x], [[1 - rho**2]])


@dataclass
class LengthCurve:
    phis: np.ndarray
    analytic: np.ndarray
    mc: np.ndarray
    mc_se: np.ndarray
    replicates: np.ndarray = field(repr=False, default=None)  # (n_rep, n_phi)

    @property
    def mc_argmin(self) -> float:
        return float(self.phis[int(np.argmin(self.mc))])

    def z_scores(self) -> np.ndarray:
        return (self.mc - self.analytic) / self.mc_se

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["phi", "analytic_length", "mc_length", "mc_se"])
            for row in zip(self.phis, self.analytic, self.mc, self.mc_se):
                w.writerow([repr(float(v)) for v in row])


def gaussian_length_curve(rho: float, alpha: float, phis: Sequence[float], rng: RngStream,
                          n_calibration: int = 10_000, n_test: int = 1000, replicates: int = 20,
                          grid: Optional[GridSpec] = None, mean_theta: float = -3.0,
                          mean_x: float = 10.0) -> LengthCurve:
    """Monte-Carlo calibrated interval length against the closed form, per phi.

    Each replicate draws a calibration and a test set from the bivariate
    Gaussian (on ``rng.spawn(r, 0)`` and ``rng.spawn(r, 1)``), shared by
    every phi.  Lengths are grid counts; the default grid is
    theta in [-10, 10] at spacing 0.1.
    """
    if replicates < 2:
        raise DomainError("need at least two replicates for a standard error")
    phis = np.asarray(phis, dtype=float)
    grid = grid or GridSpec((-10.0,), (10.0,), (200,))
    task = BivariateGaussian(rho, mean_theta=mean_theta, mean_x=mean_x)
    out = np.empty((replicates, phis.size))
    for r in range(replicates):
        cal = sample_joint(task, n_calibration, rng.spawn(r, 0), role="calibration")
        test = sample_joint(task, n_test, rng.spawn(r, 1), role="test")
        for j, phi in enumerate(phis):
            pred = calibrate(gaussian_candidate(rho, phi, mean_theta, mean_x), cal, alpha)
            out[r, j] = region_sizes_grid(pred.model, pred, test.x, grid).mean()
    analytic = np.array([gaussian_analytic_length(rho, p, alpha) for p in phis])
    return LengthCurve(phis, analytic, out.mean(axis=0), out.std(axis=0, ddof=1) / math.sqrt(replicates), out)


# -- discrete counterexample ------------------------------------------------------
# joint: X ~ Bernoulli(1/2); theta | X=0 ~ U[0, 200], theta | X=1 ~ U[200, 300]
_CE_PX = {0: Fraction(1, 2), 1: Fraction(1, 2)}
_CE_SUPPORT = {0: (Fraction(0), Fraction(200)), 1: (Fraction(200), Fraction(300))}
_CE_DOMAIN = Fraction(300)


def _ce_score_law(intervals: dict) -> dict:
    """Exact law of 1/q(theta | x) under the joint for a conditional-uniform q."""
    law: dict = {}
    for x, px in _CE_PX.items():
        lo, hi = _CE_SUPPORT[x]
        a, b = (Fraction(v) for v in intervals[x])
        overlap = max(Fraction(0), min(hi, b) - max(lo, a))
        p_in = px * overlap / (hi - lo)
        width = b - a
        law[width] = law.get(width, Fraction(0)) + p_in
        if p_in < px:
            law[math.inf] = law.get(math.inf, Fraction(0)) + (px - p_in)
    return law


def _population_quantile(law: dict, level: Fraction):
    acc = Fraction(0)
    for s in sorted(law, key=lambda v: (v == math.inf, v)):
        acc += law[s]
        if acc >= level:
            return s
    return math.inf


def _ce_length(intervals: dict, threshold) -> Fraction:
    total = Fraction(0)
    for x, px in _CE_PX.items():
        a, b = (Fraction(v) for v in intervals[x])
        if threshold == math.inf:
            size = _CE_DOMAIN
        else:
            size = (b - a) if (b - a) <= threshold else Fraction(0)
        total += px * size
    return total


def counterexample_intervals(b: float) -> tuple[dict, dict]:
    """(exact posterior, truncated candidate q_b) as x -> interval maps."""
    return ({0: (0.0, 200.0), 1: (200.0, 300.0)}, {0: (0.0, float(b)), 1: (200.0, 300.0)})


def counterexample_window(b: float) -> tuple[float, float]:
    """Alphas for which q_b calibrates to threshold b: ``[1 - P(score = b), 1)``."""
    if not 0 < b < 100:
        raise DomainError("b must lie in (0, 100)")
    _, q_b = counterexample_intervals(b)
    p_b = _ce_score_law(q_b)[Fraction(b)]
    return float(1 - p_b), 1.0


def _in_window(b: float, alpha: float) -> bool:
    _, q_b = counterexample_intervals(b)
    p_b = _ce_score_law(q_b)[Fraction(b)]
    return 0 < alpha < 1 and Fraction(alpha) >= 1 - p_b


@dataclass(frozen=True)
class CounterexampleResult:
    b: float
    alpha: float
    l_true: float
    l_qb: float
    threshold_true: float
    threshold_qb: float


def counterexample_lengths(b: float, alpha: float) -> CounterexampleResult:
    """Population region sizes of the exact posterior and of q_b, by enumeration.

    Scores take finitely many values, so the score law, its (1 - alpha)
    quantile and both expected region sizes are computed in exact rational
    arithmetic.  Inside the validity window the exact posterior gives 50
    and q_b gives b / 2.
    """
    if not 0 < b < 100:
        raise DomainError("b must lie in (0, 100)")
    if not _in_window(b, alpha):
        lo, _ = counterexample_window(b)
        raise DomainError(f"alpha={alpha} outside the window [{lo}, 1) for b={b}")
    level = 1 - Fraction(alpha)
    out = []
    for intervals in counterexample_intervals(b):
        q = _population_quantile(_ce_score_law(intervals), level)
        out.append((float(_ce_length(intervals, q)), float(q)))
    (l_true, q_true), (l_qb, q_qb) = out
    return CounterexampleResult(float(b), float(alpha), l_true, l_qb, q_true, q_qb)


@dataclass(frozen=True)
class CounterexampleMC:
    l_true: float
    se_true: float
    l_qb: float
    se_qb: float


def counterexample_mc(b: float, alpha: float, rng: RngStream, n_calibration: int = 10_000,
                      replicates: int = 20, S: int = 1000) -> CounterexampleMC:
    """Simulation check of :func:`counterexample_lengths`.

    Each replicate calibrates both candidates on simulated data and
    measures region sizes by importance weighting at x = 0 and x = 1,
    weighted by their probability 1/2.
    """
    if not 0 < b < 100:
        raise DomainError("b must lie in (0, 100)")
    task = DiscreteUniformMixture()
    models = [ConditionalUniform(iv) for iv in counterexample_intervals(b)]
    vals = np.empty((replicates, 2))
    for r in range(replicates):
        cal = sample_joint(task, n_calibration, rng.spawn(r, 0), role="calibration")
        for m, model in enumerate(models):
            pred = calibrate(model, cal, alpha)
            sizes = [region_size_iw(model, pred, [float(x)], S, rng.spawn(r, 1, m, x)) for x in (0, 1)]
            vals[r, m] = 0.5 * sizes[0] + 0.5 * sizes[1]
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(replicates)
    return CounterexampleMC(float(mean[0]), float(se[0]), float(mean[1]), float(se[1]))


# -- training traces ----------------------------------------------------------------
@dataclass
class EfficiencyTrace:
    steps: list
    estimates: list
    task: str = ""
    alpha: float = 0.05
    seed: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["checkpoint_step", "l_mean", "l_se", "estimator", "task", "alpha", "seed"])
            for step, est in zip(self.steps, self.estimates):
                w.writerow([step, repr(est.mean), repr(est.se), est.kind, self.task, repr(self.alpha), self.seed])


def efficiency_trace(checkpoints, task: TaskSpec, alpha: float, calibration: JointDataset,
                     test: JointDataset, S: int, rng: RngStream) -> EfficiencyTrace:
    """Calibrated inverse efficiency of each ``(step, model)`` checkpoint.

    Every checkpoint uses the same calibration set, test set and per-point
    streams.
    """
    steps, ests = [], []
    for step, model in checkpoints:
        pred = calibrate(model, calibration, alpha)
        steps.append(int(step))
        ests.append(inverse_efficiency(model, pred, test, S, rng))
    return EfficiencyTrace(steps, ests, task.name, alpha, rng.seed)
