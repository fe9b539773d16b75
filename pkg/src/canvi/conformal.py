"""Conformal scores, calibrated regions, HDR baselines and coverage checks.

The score of a pair is ``1 / q(theta | x)``.  Internally everything runs on
the log-score ``-log q(theta | x)``: the map is strictly increasing, so the
calibrated region is the same set, and the log form stays finite where the
raw score would overflow.  A zero density gives score ``+inf``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError
from .models import ConditionalLinearGaussian, PosteriorModel
from .stats import RngStream, conformal_quantile
from .tasks import JointDataset, TaskSpec, sample_joint

DEFAULT_LEVELS = tuple(round(0.05 * k, 2) for k in range(1, 20))  # 1 - alpha grid

# samples held in memory at once when estimating HDR thresholds
_HDR_CHUNK = 200_000


def log_score(model: PosteriorModel, x, theta) -> np.ndarray:
    """``-log q(theta | x)``; ``+inf`` where the density is zero."""
    return -model.log_prob(theta, x)


def score(model: PosteriorModel, x, theta):
    """``1 / q(theta | x)`` with zero density mapped to ``+inf``."""
    with np.errstate(over="ignore"):
        s = np.exp(log_score(model, x, theta))
    return float(s) if np.ndim(s) == 0 else s


@dataclass(frozen=True)
class CalibratedPredictor:
    """A model plus a conformal threshold.

    ``log_threshold`` is the conformal quantile of calibration log-scores;
    ``threshold`` is the same value on the raw score scale.
    """

    model: PosteriorModel
    log_threshold: float
    alpha: float
    n_calibration: int

    kind = "conformal"

    @property
    def threshold(self) -> float:
        return math.inf if self.log_threshold == math.inf else math.exp(self.log_threshold)

    @property
    def level(self) -> float:
        return 1.0 - self.alpha

    @property
    def full_domain(self) -> bool:
        return self.log_threshold == math.inf

    def contains(self, x, theta):
        """Whether theta lies in the region of x (+inf <= +inf counts as inside)."""
        inside = log_score(self.model, x, theta) <= self.log_threshold
        return bool(inside) if np.ndim(inside) == 0 else inside

    def recalibrate(self, data: JointDataset) -> "CalibratedPredictor":
        return calibrate(self.model, data, self.alpha)


def calibration_log_scores(model: PosteriorModel, data: JointDataset) -> np.ndarray:
    if len(data) < 1:
        raise DomainError("calibration set is empty")
    return log_score(model, data.x, data.theta)


def calibrate(model: PosteriorModel, data: JointDataset, alpha: float) -> CalibratedPredictor:
    """Split-conformal calibration of ``model`` on ``data`` at miscoverage ``alpha``."""
    scores = calibration_log_scores(model, data)
    return CalibratedPredictor(model, conformal_quantile(scores, alpha), float(alpha), len(data))


def calibrate_levels(model: PosteriorModel, data: JointDataset, alphas: Sequence[float]) -> list:
    """One predictor per alpha, scoring the calibration set once."""
    scores = calibration_log_scores(model, data)
    return [CalibratedPredictor(model, conformal_quantile(scores, a), float(a), len(data)) for a in alphas]


# -- highest-density baseline ------------------------------------------------------
def _quantile_order_stat(values: np.ndarray, alphas, axis: int = -1) -> np.ndarray:
    # order-statistic quantile: commutes with monotone maps such as exp/log
    return np.quantile(values, alphas, axis=axis, method="inverted_cdf")


def hdr_log_thresholds(model: PosteriorModel, x, alphas, M: int, rng: RngStream) -> np.ndarray:
    """Empirical alpha-quantiles of ``log q(theta_j | x)`` over M model draws.

    Returns shape ``(n_x, n_alphas)``.  Points are processed in chunks on
    substreams ``rng.spawn(chunk_index)``.
    """
    if M < 1:
        raise DomainError("M must be >= 1")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    if np.any((alphas <= 0) | (alphas >= 1)):
        raise DomainError("alpha must lie in (0, 1)")
    step = max(1, _HDR_CHUNK // M)
    out = np.empty((x.shape[0], alphas.size))
    for c, start in enumerate(range(0, x.shape[0], step)):
        _, lq = model.sample_with_log_prob(x[start:start + step], rng.spawn(c), M)
        out[start:start + step] = _quantile_order_stat(lq, alphas, axis=1).T
    return out


def hdr_threshold(model: PosteriorModel, x, alpha: float, M: int, rng: RngStream):
    """Density cut-off whose super-level set keeps about 1 - alpha of the model's mass."""
    lz = hdr_log_thresholds(model, np.atleast_2d(x), [alpha], M, rng)[:, 0]
    z = np.exp(lz)
    return float(z[0]) if np.ndim(x) == 1 else z


@dataclass(frozen=True)
class HdrPredictor:
    """Highest-density credible region of the model itself (no calibration)."""

    model: PosteriorModel
    alpha: float
    M: int = 100

    kind = "hdr"

    @property
    def level(self) -> float:
        return 1.0 - self.alpha

    def contains(self, x, theta, rng: RngStream):
        x2 = np.atleast_2d(x)
        lz = hdr_log_thresholds(self.model, x2, [self.alpha], self.M, rng)[:, 0]
        inside = self.model.log_prob(np.atleast_2d(theta), x2) >= lz
        return bool(inside[0]) if np.ndim(x) == 1 else inside


# -- coverage ----------------------------------------------------------------------
@dataclass
class CoverageCurve:
    """Empirical coverage per nominal level, averaged over test batches."""

    levels: np.ndarray
    coverage: np.ndarray
    se: np.ndarray
    per_batch: np.ndarray  # (n_batches, n_levels)
    kind: str = "conformal"
    task: str = ""
    seed: int = 0
    n_test: int = 0

    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.coverage - self.levels)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "coverage_mean", "coverage_se", "predictor_kind", "task", "seed"])
            for lv, c, s in zip(self.levels, self.coverage, self.se):
                w.writerow([repr(float(lv)), repr(float(c)), repr(float(s)), self.kind, self.task, self.seed])


def assess_coverage(predictors, task: TaskSpec, n_test: int, n_batches: int, rng: RngStream,
                    test_batches: Optional[Sequence[JointDataset]] = None) -> CoverageCurve:
    """Fraction of fresh (theta, x) pairs that fall inside each predictor's region.

    ``predictors`` is one predictor or a list of predictors of one kind that
    share a model; the model density is evaluated once per test batch.
    Batch ``b`` is drawn from ``rng.spawn(b, 0)``; HDR thresholds use
    ``rng.spawn(b, 1)``.  Pre-drawn ``test_batches`` may be passed instead.
    """
    if not isinstance(predictors, (list, tuple)):
        predictors = [predictors]
    if not predictors:
        raise DomainError("need at least one predictor")
    kinds = {p.kind for p in predictors}
    if len(kinds) != 1:
        raise DomainError("predictors must all be of one kind")
    model = predictors[0].model
    if any(p.model is not model for p in predictors):
        raise DomainError("predictors must share one model")
    if n_test < 1 or n_batches < 1:
        raise DomainError("n_test and n_batches must be >= 1")
    order = np.argsort([p.level for p in predictors], kind="stable")
    predictors = [predictors[i] for i in order]
    levels = np.array([p.level for p in predictors])
    if np.any(np.diff(levels) <= 0):
        raise DomainError("nominal levels must be distinct")
    kind = kinds.pop()

    if test_batches is None:
        test_batches = [sample_joint(task, n_test, rng.spawn(b, 0), role="test") for b in range(n_batches)]
    per_batch = np.empty((len(test_batches), len(predictors)))
    for b, data in enumerate(test_batches):
        lq = model.log_prob(data.theta, data.x)
        if kind == "conformal":
            thr = np.array([p.log_threshold for p in predictors])
            inside = -lq[:, None] <= thr[None, :]
        else:
            Ms = {p.M for p in predictors}
            if len(Ms) != 1:
                raise DomainError("HDR predictors in one sweep must share M")
            lz = hdr_log_thresholds(model, data.x, [p.alpha for p in predictors], Ms.pop(), rng.spawn(b, 1))
            inside = lq[:, None] >= lz
        per_batch[b] = inside.mean(axis=0)
    B = per_batch.shape[0]
    mean = per_batch.mean(axis=0)
    if B > 1:
        se = per_batch.std(axis=0, ddof=1) / math.sqrt(B)
    else:
        se = np.sqrt(mean * (1 - mean) / len(test_batches[0]))
    return CoverageCurve(levels, mean, se, per_batch, kind=kind, task=task.name, seed=rng.seed,
                         n_test=len(test_batches[0]))


# -- monotone transforms of the score ------------------------------------------------
def _probe_points(data: JointDataset, probes: int, rng: RngStream):
    g = rng.generator
    idx = g.integers(0, len(data), size=probes)
    other = g.integers(0, len(data), size=probes)
    # half the probes keep their own theta (mostly inside), half borrow another row's
    theta = np.where((np.arange(probes) % 2 == 0)[:, None], data.theta[idx], data.theta[other])
    return theta, data.x[idx]


def transform_equivalence_check(model: PosteriorModel, data: JointDataset, alpha: float,
                                f: Callable[[np.ndarray], np.ndarray], rng: RngStream,
                                probes: int = 1000, probe_points=None) -> bool:
    """Whether calibrating on ``f(score)`` gives the same regions as on ``score``.

    ``data`` is the calibration set.  Membership is compared exactly at
    ``probes`` random (theta, x) pairs built from ``data``, or at the given
    ``probe_points = (theta, x)``.
    """
    cal = np.asarray(score(model, data.x, data.theta))
    theta, x = _probe_points(data, probes, rng) if probe_points is None else probe_points
    s = np.asarray(score(model, x, theta))
    base = s <= conformal_quantile(cal, alpha)
    transformed = f(s) <= conformal_quantile(f(cal), alpha)
    return bool(np.array_equal(base, transformed))


def abs_z_score(model: ConditionalLinearGaussian, x, theta) -> np.ndarray:
    """Mahalanobis distance of theta from the Gaussian mean (|z| in one dimension)."""
    return np.sqrt(model.mahalanobis_sq(theta, x))


def zscore_equivalence_check(model: ConditionalLinearGaussian, data: JointDataset, alpha: float,
                             rng: RngStream, probes: int = 1000, probe_points=None) -> bool:
    """Whether conformalizing |z| gives the same regions as the density score."""
    if not isinstance(model, ConditionalLinearGaussian):
        raise DomainError("the z-score form needs a Gaussian candidate")
    theta, x = _probe_points(data, probes, rng) if probe_points is None else probe_points
    base = calibrate(model, data, alpha).contains(x, theta)
    zq = conformal_quantile(abs_z_score(model, data.x, data.theta), alpha)
    return bool(np.array_equal(base, abs_z_score(model, x, theta) <= zq))
