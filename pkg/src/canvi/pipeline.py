"""Candidate selection by calibrated efficiency, with fresh recalibration.

Every candidate is calibrated on one calibration set and scored for
region size on one test set.  The smallest region wins (ties go to the
lowest index) and its threshold is then recomputed on a fresh set of the
same size, so the returned predictor keeps its coverage guarantee.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .conformal import (
    DEFAULT_LEVELS,
    CalibratedPredictor,
    CoverageCurve,
    HdrPredictor,
    assess_coverage,
    calibrate,
    calibrate_levels,
)
from .efficiency import gaussian_candidate, inverse_efficiency
from .errors import CanviError, ConfigError, PipelineError
from .models import (
    ConditionalLinearGaussian,
    ConditionalUniform,
    DispersionScaled,
    MixtureDensityNetwork,
    PosteriorModel,
    PriorModel,
    load_model,
    train_favi,
)
from .stats import RngStream
from .tasks import BivariateGaussian, JointDataset, TaskSpec, make_task, sample_joint

# top-level stream labels under the master seed
TRAIN, CALIBRATION, TEST, RECALIBRATION, EFFICIENCY, COVERAGE = 1, 2, 3, 4, 5, 6

FAMILY_KEYS = {
    "mdn": {"n_components", "hidden", "steps", "batch", "lr", "n_pilot", "transform"},
    "linear_gaussian": {"slope", "intercept", "covariance"},
    "gaussian_phi": {"phi"},
    "prior": set(),
    "conditional_uniform": {"intervals"},
    "checkpoint": {"path"},
}


@dataclass
class TrainSettings:
    steps: int = 5000
    batch: int = 256
    lr: float = 1e-3
    checkpoint_every: Optional[int] = None

    def validate(self):
        if self.steps < 0 or self.batch < 1 or not self.lr > 0:
            raise ConfigError("train needs steps >= 0, batch >= 1 and lr > 0")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")


@dataclass
class CandidateSpec:
    """How to build one candidate.

    ``family`` is one of ``mdn``, ``linear_gaussian``, ``gaussian_phi``,
    ``prior``, ``conditional_uniform`` or ``checkpoint``; ``params`` holds
    its settings.  ``dispersion`` rescales the candidate's spread.
    """

    family: str
    params: dict = field(default_factory=dict)
    dispersion: float = 1.0
    label: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateSpec":
        d = dict(d)
        family = d.pop("family", None)
        if family not in FAMILY_KEYS:
            raise ConfigError(f"unknown candidate family {family!r}; choose from {sorted(FAMILY_KEYS)}")
        dispersion = float(d.pop("dispersion", 1.0))
        label = str(d.pop("label", ""))
        unknown = set(d) - FAMILY_KEYS[family]
        if unknown:
            raise ConfigError(f"unknown keys for {family} candidate: {sorted(unknown)}")
        if not (dispersion > 0 and math.isfinite(dispersion)):
            raise ConfigError("dispersion must be a positive finite number")
        return cls(family, d, dispersion, label)

    def to_dict(self) -> dict:
        return {"family": self.family, "label": self.display_label, "dispersion": self.dispersion, **self.params}

    @property
    def display_label(self) -> str:
        if self.label:
            return self.label
        extra = "".join(f" {k}={v}" for k, v in sorted(self.params.items()) if k in ("phi", "path"))
        disp = f" c={self.dispersion:g}" if self.dispersion != 1.0 else ""
        return f"{self.family}{extra}{disp}"


@dataclass
class CanviConfig:
    task: str
    candidates: list
    alpha: float = 0.05
    n_calibration: int = 10_000
    n_test: int = 100
    S: int = 10_000
    seed: int = 0
    task_params: dict = field(default_factory=dict)
    train: TrainSettings = field(default_factory=TrainSettings)
    coverage_n_test: int = 10_000
    coverage_batches: int = 10
    hdr_M: int = 100
    levels: tuple = DEFAULT_LEVELS
    integrate_alpha: bool = False
    workers: int = 1

    def __post_init__(self):
        self.candidates = [c if isinstance(c, CandidateSpec) else CandidateSpec.from_dict(c) for c in self.candidates]
        if isinstance(self.train, dict):
            self.train = TrainSettings(**self.train)
        self.levels = tuple(float(v) for v in self.levels)
        self.validate()

    def validate(self):
        if not self.candidates:
            raise ConfigError("candidate list is empty")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        for name in ("n_calibration", "n_test", "S", "hdr_M", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.coverage_n_test < 1 or self.coverage_batches < 0:
            raise ConfigError("coverage needs n_test >= 1 and batches >= 0")
        if any(not 0 < v < 1 for v in self.levels) or len(set(self.levels)) != len(self.levels):
            raise ConfigError("levels must be distinct values in (0, 1)")
        self.train.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["candidates"] = [c.to_dict() for c in self.candidates]
        d["levels"] = list(self.levels)
        return d

    def make_task(self) -> TaskSpec:
        return make_task(self.task, **self.task_params)


# -- candidates -------------------------------------------------------------------
@dataclass
class BuiltCandidate:
    spec: CandidateSpec
    model: Optional[PosteriorModel] = None
    error: str = ""
    losses: Optional[np.ndarray] = None
    checkpoints: list = field(default_factory=list)


def _training_key(spec: CandidateSpec, settings: TrainSettings) -> str:
    p = dict(spec.params)
    for k, v in asdict(settings).items():
        p.setdefault(k, v)
    return json.dumps(p, sort_keys=True)


def build_candidates(config: CanviConfig, task: TaskSpec, rng: RngStream) -> list:
    """Construct (and train, for ``mdn``) every candidate.

    MDN candidates that differ only in ``dispersion`` share one trained
    network; the network for the first such candidate trains on
    ``rng.spawn(index)``.  A failure marks the candidate instead of raising.
    """
    trained: dict = {}
    built = []
    for i, spec in enumerate(config.candidates):
        try:
            base, losses, ckpts = _build_base(spec, config, task, rng.spawn(i), trained)
            model = base if spec.dispersion == 1.0 else DispersionScaled(base, spec.dispersion)
            if model.theta_dim != task.theta_dim or model.x_dim != task.x_dim:
                raise PipelineError("candidate dimensions do not match the task")
            built.append(BuiltCandidate(spec, model, losses=losses, checkpoints=ckpts))
        except (CanviError, ValueError, OSError, KeyError) as e:
            built.append(BuiltCandidate(spec, error=f"{type(e).__name__}: {e}"))
    return built


def _build_base(spec, config, task, rng, cache):
    p = spec.params
    if spec.family == "mdn":
        key = _training_key(spec, config.train)
        if key not in cache:
            settings = {**asdict(config.train), **{k: p[k] for k in ("steps", "batch", "lr") if k in p}}
            net = MixtureDensityNetwork.for_task(
                task, rng.spawn(0), n_components=int(p.get("n_components", 10)),
                hidden=tuple(p.get("hidden", (64, 64))), n_pilot=int(p.get("n_pilot", 10_000)),
                transform=bool(p.get("transform", True)))
            res = train_favi(net, task, int(settings["steps"]), rng.spawn(1), batch=int(settings["batch"]),
                             lr=float(settings["lr"]), checkpoint_every=settings["checkpoint_every"])
            cache[key] = (res.model, res.losses, res.checkpoints)
        return cache[key]
    if spec.family == "linear_gaussian":
        return ConditionalLinearGaussian(p["slope"], p.get("intercept"), p.get("covariance")), None, []
    if spec.family == "gaussian_phi":
        if not isinstance(task, BivariateGaussian):
            raise PipelineError("gaussian_phi candidates need the bivariate_gaussian task")
        return gaussian_candidate(task.rho, float(p["phi"]), task.mean_theta, task.mean_x), None, []
    if spec.family == "prior":
        return PriorModel(task), None, []
    if spec.family == "conditional_uniform":
        return ConditionalUniform({int(k): tuple(v) for k, v in p["intervals"].items()}), None, []
    if spec.family == "checkpoint":
        return load_model(p["path"]), None, []
    raise ConfigError(f"unknown candidate family {spec.family!r}")


# -- the procedure -------------------------------------------------------------
@dataclass
class CandidateResult:
    label: str
    family: str
    dispersion: float
    status: str
    threshold: float = math.nan
    log_threshold: float = math.nan
    l_hat: float = math.nan
    l_se: float = math.nan
    error: str = ""
    l_alpha_integral: Optional[float] = None


@dataclass
class CanviReport:
    candidates: list
    selected: int
    threshold: float
    log_threshold: float
    l_recalibrated: float
    l_recalibrated_se: float
    coverage: Optional[float]
    coverage_se: Optional[float]
    fingerprints: dict
    config: dict
    streams: dict
    predictor: CalibratedPredictor = field(repr=False, default=None)
    datasets: dict = field(repr=False, default_factory=dict)
    built: list = field(repr=False, default_factory=list)

    @property
    def min_l_hat(self) -> float:
        return min(c.l_hat for c in self.candidates if c.status == "ok")

    @property
    def slack(self) -> float:
        return self.l_recalibrated - self.min_l_hat

    def to_dict(self) -> dict:
        return _jsonable({
            "selected": self.selected,
            "selected_label": self.candidates[self.selected].label,
            "threshold": self.threshold,
            "log_threshold": self.log_threshold,
            "l_recalibrated": self.l_recalibrated,
            "l_recalibrated_se": self.l_recalibrated_se,
            "slack": self.slack,
            "coverage": self.coverage,
            "coverage_se": self.coverage_se,
            "candidates": [asdict(c) for c in self.candidates],
            "fingerprints": self.fingerprints,
            "streams": self.streams,
            "config": self.config,
        })

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n")

    def summary_table(self) -> str:
        rows = [f"{'idx':>3}  {'candidate':<28} {'status':<7} {'threshold':>14} {'l_hat':>12} {'se':>10}"]
        for i, c in enumerate(self.candidates):
            mark = " *" if i == self.selected else ""
            rows.append(f"{i:>3}  {c.label:<28} {c.status:<7} {_fmt(c.threshold):>14} "
                        f"{_fmt(c.l_hat):>12} {_fmt(c.l_se):>10}{mark}")
        rows.append(f"selected {self.selected}; recalibrated threshold {_fmt(self.threshold)}, "
                    f"l_R {_fmt(self.l_recalibrated)} (se {_fmt(self.l_recalibrated_se)})")
        if self.coverage is not None:
            rows.append(f"coverage {self.coverage:.4f} (se {self.coverage_se:.4f}) at nominal "
                        f"{1 - self.config['alpha']:.4f}")
        return "\n".join(rows)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    return "inf" if v == math.inf else f"{v:.6g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _evaluate(cand: BuiltCandidate, cal: JointDataset, test: JointDataset, config: CanviConfig,
              eff_rng: RngStream) -> CandidateResult:
    spec = cand.spec
    res = CandidateResult(spec.display_label, spec.family, spec.dispersion, "failed", error=cand.error)
    if cand.model is None:
        return res
    try:
        pred = calibrate(cand.model, cal, config.alpha)
        est = inverse_efficiency(cand.model, pred, test, config.S, eff_rng)
        if not math.isfinite(est.mean):
            raise PipelineError("non-finite inverse efficiency")
        res.threshold, res.log_threshold = pred.threshold, pred.log_threshold
        res.l_hat, res.l_se, res.status = est.mean, est.se, "ok"
        if config.integrate_alpha:
            res.l_alpha_integral = alpha_integrated_efficiency(cand.model, cal, test, config.levels, config.S, eff_rng)
    except (CanviError, ValueError, FloatingPointError) as e:
        res.status, res.error = "failed", f"{type(e).__name__}: {e}"
    return res


def alpha_integrated_efficiency(model, cal, test, levels, S, rng) -> float:
    """Trapezoid integral of the calibrated inverse efficiency over alpha = 1 - levels."""
    alphas = np.sort(1.0 - np.asarray(levels, dtype=float))
    preds = calibrate_levels(model, cal, alphas)
    ls = np.array([inverse_efficiency(model, p, test, S, rng).mean for p in preds])
    return float(np.sum(0.5 * (ls[1:] + ls[:-1]) * np.diff(alphas)))


def run_canvi(config: CanviConfig, replicate: Optional[int] = None, with_coverage: bool = True,
              built: Optional[list] = None) -> CanviReport:
    """Select the most efficient calibrated candidate and recalibrate it.

    Streams: training ``(TRAIN,)``, calibration ``(CALIBRATION,)``, test
    ``(TEST,)``, recalibration ``(RECALIBRATION,)``, per-point efficiency
    ``(EFFICIENCY,)`` and coverage ``(COVERAGE,)``, all under the master
    seed and, when given, the ``replicate`` prefix.

    Raises
    ------
    PipelineError
        When no candidate could be built and evaluated.
    """
    task = config.make_task()
    root = RngStream(config.seed, () if replicate is None else (int(replicate),))
    if built is None:
        built = build_candidates(config, task, root.spawn(TRAIN))
    cal = sample_joint(task, config.n_calibration, root.spawn(CALIBRATION), role="calibration")
    test = sample_joint(task, config.n_test, root.spawn(TEST), role="test")
    eff_rng = root.spawn(EFFICIENCY)

    if config.workers > 1 and len(built) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as ex:
            results = list(ex.map(lambda c: _evaluate(c, cal, test, config, eff_rng), built))
    else:
        results = [_evaluate(c, cal, test, config, eff_rng) for c in built]

    scores = np.array([r.l_hat if r.status == "ok" else np.inf for r in results])
    if not np.isfinite(scores).any():
        raise PipelineError("every candidate failed: " + "; ".join(f"{r.label}: {r.error}" for r in results))
    selected = int(np.argmin(scores))  # first minimum, so ties go to the lowest index

    recal = sample_joint(task, config.n_calibration, root.spawn(RECALIBRATION), role="recalibration")
    model = built[selected].model
    pred = calibrate(model, recal, config.alpha)
    est_r = inverse_efficiency(model, pred, test, config.S, eff_rng)

    coverage = coverage_se = None
    if with_coverage and config.coverage_batches > 0:
        curve = assess_coverage(pred, task, config.coverage_n_test, config.coverage_batches, root.spawn(COVERAGE))
        coverage, coverage_se = float(curve.coverage[0]), float(curve.se[0])

    datasets = {"calibration": cal, "test": test, "recalibration": recal}
    return CanviReport(
        candidates=results,
        selected=selected,
        threshold=pred.threshold,
        log_threshold=pred.log_threshold,
        l_recalibrated=est_r.mean,
        l_recalibrated_se=est_r.se,
        coverage=coverage,
        coverage_se=coverage_se,
        fingerprints={k: d.fingerprint() for k, d in datasets.items()},
        config=config.to_dict(),
        streams={"seed": config.seed, "prefix": list(root.key), "train": [*root.key, TRAIN],
                 "calibration": [*root.key, CALIBRATION], "test": [*root.key, TEST],
                 "recalibration": [*root.key, RECALIBRATION], "efficiency": [*root.key, EFFICIENCY],
                 "coverage": [*root.key, COVERAGE], "efficiency_substreams_shared": True},
        predictor=pred,
        datasets=datasets,
        built=built,
    )


# -- checks built on the procedure ----------------------------------------------
@dataclass
class SlackStats:
    n_calibration: int
    slack: np.ndarray  # l_R - min_t l_hat per replicate
    min_l: np.ndarray
    selected: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.slack))

    @property
    def median_abs(self) -> float:
        return float(np.median(np.abs(self.slack)))

    @property
    def median_rel_abs(self) -> float:
        return float(np.median(np.abs(self.slack) / self.min_l))


def efficiency_slack_check(config: CanviConfig, n_replicates: int = 20,
                           n_calibrations: Sequence[int] = (1000, 10_000)) -> list:
    """Recalibration slack over replicate runs, for each calibration size.

    Replicate ``r`` uses stream prefix ``(r,)`` at every calibration size,
    so the sizes are compared on common random numbers.  Candidates are
    rebuilt per replicate.
    """
    if n_replicates < 10:
        raise ConfigError("the slack check needs at least 10 replicates")
    out = []
    for n_c in n_calibrations:
        cfg = CanviConfig(**{**_shallow(config), "n_calibration": int(n_c)})
        slack, min_l, sel = [], [], []
        for r in range(n_replicates):
            rep = run_canvi(cfg, replicate=r, with_coverage=False)
            slack.append(rep.slack)
            min_l.append(rep.min_l_hat)
            sel.append(rep.selected)
        out.append(SlackStats(int(n_c), np.array(slack), np.array(min_l), np.array(sel)))
    return out


def _shallow(config: CanviConfig) -> dict:
    return {f: getattr(config, f) for f in config.__dataclass_fields__}


def coverage_sweep(config: CanviConfig, levels: Optional[Sequence[float]] = None, candidate: int = 0,
                   built: Optional[list] = None) -> tuple[CoverageCurve, CoverageCurve]:
    """Conformal and HDR coverage curves of one candidate on shared test batches."""
    levels = tuple(config.levels if levels is None else levels)
    if any(not 0 < v < 1 for v in levels):
        raise ConfigError("levels must lie in (0, 1)")
    task = config.make_task()
    root = RngStream(config.seed, ())
    if built is None:
        built = build_candidates(config, task, root.spawn(TRAIN))
    cand = built[candidate]
    if cand.model is None:
        raise PipelineError(f"candidate {candidate} failed: {cand.error}")
    cal = sample_joint(task, config.n_calibration, root.spawn(CALIBRATION), role="calibration")
    cov_rng = root.spawn(COVERAGE)
    batches = [sample_joint(task, config.coverage_n_test, cov_rng.spawn(b, 0), role="test")
               for b in range(config.coverage_batches)]
    alphas = [1.0 - v for v in levels]
    conf = assess_coverage(calibrate_levels(cand.model, cal, alphas), task, config.coverage_n_test,
                           len(batches), cov_rng, test_batches=batches)
    hdr = assess_coverage([HdrPredictor(cand.model, a, config.hdr_M) for a in alphas], task,
                          config.coverage_n_test, len(batches), cov_rng, test_batches=batches)
    return conf, hdr
