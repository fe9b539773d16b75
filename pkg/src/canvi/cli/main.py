"""``canvi`` command-line interface.

Exit codes: 0 success, 1 file-system failure, 2 usage or configuration
error, 3 numerical or training failure.  Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ..efficiency import (
    counterexample_lengths,
    counterexample_mc,
    counterexample_window,
    efficiency_trace,
    gaussian_length_curve,
)
from ..errors import CanviError, ConfigError, DomainError, PipelineError, SimulationError, TrainingError
from ..models import MixtureDensityNetwork, save_model, train_favi
from ..pipeline import CALIBRATION, EFFICIENCY, TEST, TRAIN, coverage_sweep, run_canvi
from ..stats import RngStream
from ..tasks import TASKS, make_task, sample_joint
from .config import ExperimentConfig, load_config
from .svg import Series, line_plot

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _experiment(args) -> ExperimentConfig:
    overrides = {"seed": args.seed, "alpha": getattr(args, "alpha", None), "out": args.out,
                 "workers": args.workers, "steps": getattr(args, "steps", None)}
    exp = load_config(args.config, overrides)
    exp.output_dir.mkdir(parents=True, exist_ok=True)
    (exp.output_dir / "config_echo.json").write_text(json.dumps(exp.echo(), indent=2) + "\n")
    return exp


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- subcommands -------------------------------------------------------------------
def cmd_simulate(args) -> int:
    if args.task not in TASKS:
        raise ConfigError(f"unknown task {args.task!r}; choose from {sorted(TASKS)}")
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    task = make_task(args.task, **dict(args.param or []))
    data = sample_joint(task, args.n, RngStream(args.seed, (args.stream,)), role=args.role)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.to_csv(out)
    _info(f"wrote {len(data)} rows to {out} (sha256 {data.fingerprint()[:16]})")
    return EXIT_OK


def _write_losses(path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses, start=1):
            w.writerow([i, repr(float(v))])


def _train_mdn(exp: ExperimentConfig, index: int, checkpoint_every=None):
    cfg = exp.canvi
    spec = cfg.candidates[index]
    if spec.family != "mdn":
        raise ConfigError(f"candidate {index} is {spec.family!r}, not a trainable mdn")
    task = cfg.make_task()
    p = spec.params
    rng = RngStream(cfg.seed, (TRAIN,)).spawn(index)
    net = MixtureDensityNetwork.for_task(task, rng.spawn(0), n_components=int(p.get("n_components", 10)),
                                         hidden=tuple(p.get("hidden", (64, 64))),
                                         n_pilot=int(p.get("n_pilot", 10_000)),
                                         transform=bool(p.get("transform", True)))
    steps = int(p.get("steps", cfg.train.steps))
    every = checkpoint_every or cfg.train.checkpoint_every or max(steps, 1)
    return task, train_favi(net, task, steps, rng.spawn(1), batch=int(p.get("batch", cfg.train.batch)),
                            lr=float(p.get("lr", cfg.train.lr)), checkpoint_every=every)


def cmd_train(args) -> int:
    exp = _experiment(args)
    indices = [i for i, c in enumerate(exp.canvi.candidates) if c.family == "mdn"]
    if not indices:
        raise ConfigError("config has no mdn candidate to train")
    seen = set()
    for i in indices:
        spec = exp.canvi.candidates[i]
        key = json.dumps(spec.params, sort_keys=True)
        if key in seen:
            continue
        seen.add(key)
        _, res = _train_mdn(exp, i)
        for step, model in res.checkpoints:
            save_model(model, exp.output_dir / f"model_c{i}_step{step}.json", {"candidate": i, "step": step})
        _write_losses(exp.output_dir / f"loss_c{i}.csv", res.losses)
        last = f"{res.losses[-1]:.4f}" if res.losses.size else "-"
        _info(f"candidate {i}: {len(res.checkpoints)} checkpoints, final loss {last}")
    return EXIT_OK


def cmd_canvi(args) -> int:
    exp = _experiment(args)
    report = run_canvi(exp.canvi)
    report.to_json(exp.output_dir / "report.json")
    table = report.summary_table()
    (exp.output_dir / "summary.txt").write_text(table + "\n")
    if exp.save_datasets:
        for name, data in report.datasets.items():
            data.to_csv(exp.output_dir / f"dataset_{name}.csv")
    print(table)
    return EXIT_OK


def cmd_coverage(args) -> int:
    exp = _experiment(args)
    idx = exp.candidate if args.candidate is None else args.candidate
    if not 0 <= idx < len(exp.canvi.candidates):
        raise ConfigError("--candidate index out of range")
    conf, hdr = coverage_sweep(exp.canvi, candidate=idx)
    conf.to_csv(exp.output_dir / "coverage_conformal.csv")
    hdr.to_csv(exp.output_dir / "coverage_hdr.csv")
    label = exp.canvi.candidates[idx].display_label
    line_plot([Series(conf.levels, conf.coverage, "conformalized", conf.se),
               Series(hdr.levels, hdr.coverage, "HDR (uncalibrated)", hdr.se, dashed=True)],
              exp.output_dir / "coverage.svg", title=f"{exp.canvi.task}: {label}",
              xlabel="nominal coverage", ylabel="empirical coverage", diagonal=True)
    print(f"{'level':>6} {'conformal':>10} {'hdr':>10}")
    for lv, c, h in zip(conf.levels, conf.coverage, hdr.coverage):
        print(f"{lv:>6.2f} {c:>10.4f} {h:>10.4f}")
    return EXIT_OK


def cmd_efficiency_trace(args) -> int:
    exp = _experiment(args)
    cfg = exp.canvi
    idx = exp.candidate if args.candidate is None else args.candidate
    every = args.every or cfg.train.checkpoint_every or max(cfg.train.steps // 10, 1)
    task, res = _train_mdn(exp, idx, checkpoint_every=every)
    root = RngStream(cfg.seed, ())
    cal = sample_joint(task, cfg.n_calibration, root.spawn(CALIBRATION), role="calibration")
    test = sample_joint(task, cfg.n_test, root.spawn(TEST), role="test")
    trace = efficiency_trace(res.checkpoints, task, cfg.alpha, cal, test, cfg.S, root.spawn(EFFICIENCY))
    trace.to_csv(exp.output_dir / "efficiency_trace.csv")
    _write_losses(exp.output_dir / f"loss_c{idx}.csv", res.losses)
    line_plot([Series(trace.steps, [e.mean for e in trace.estimates], "calibrated region size",
                      [e.se for e in trace.estimates])],
              exp.output_dir / "efficiency_trace.svg", title=f"{cfg.task}: region size during training",
              xlabel="training step", ylabel="mean region size")
    for step, est in zip(trace.steps, trace.estimates):
        print(f"{step:>8} {est.mean:>14.6g} {est.se:>12.4g}")
    return EXIT_OK


def cmd_gaussian_verify(args) -> int:
    if not abs(args.rho) < 1:
        raise ConfigError("--rho must satisfy |rho| < 1")
    if not 0 < args.alpha < 1:
        raise ConfigError("--alpha must lie in (0, 1)")
    n = int(round(2.0 / args.phi_step))
    phis = np.round(np.linspace(-1.0, 1.0, n + 1), 10)
    curve = gaussian_length_curve(args.rho, args.alpha, phis, RngStream(args.seed, (7,)),
                                  n_calibration=args.n_calibration, n_test=args.n_test,
                                  replicates=args.replicates)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out / "gaussian_lengths.csv")
    line_plot([Series(phis, curve.analytic, "analytic"), Series(phis, curve.mc, "Monte Carlo", curve.mc_se)],
              out / "gaussian_lengths.svg", title=f"calibrated length vs phi (rho={args.rho}, alpha={args.alpha})",
              xlabel="phi", ylabel="interval length")
    z = np.abs(curve.z_scores())
    print(f"max |MC - analytic| / se = {z.max():.3f}; MC argmin phi = {curve.mc_argmin:.2f}")
    return EXIT_OK


def cmd_counterexample(args) -> int:
    try:
        res = counterexample_lengths(args.b, args.alpha)
    except DomainError as e:
        raise ConfigError(str(e)) from None
    mc = counterexample_mc(args.b, args.alpha, RngStream(args.seed, (8,)), n_calibration=args.n_calibration,
                           replicates=args.replicates)
    lo, _ = counterexample_window(args.b)
    print(f"b={args.b:g} alpha={args.alpha:g} (valid alpha window [{lo:g}, 1))")
    print(f"{'candidate':<16} {'exact':>10} {'analytic':>10} {'mc':>12} {'mc_se':>10}")
    print(f"{'true posterior':<16} {res.l_true:>10.6g} {50.0:>10.6g} {mc.l_true:>12.6g} {mc.se_true:>10.3g}")
    print(f"{'q_b':<16} {res.l_qb:>10.6g} {args.b / 2:>10.6g} {mc.l_qb:>12.6g} {mc.se_qb:>10.3g}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="canvi", description="Conformalized amortized posterior regions and candidate selection.")
    p.add_argument("--workers", type=int, default=None, help="cap on concurrent workers")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="draw a joint dataset to CSV")
    s.add_argument("--task", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stream", type=int, default=0, help="substream label under the seed")
    s.add_argument("--role", default="train", choices=["train", "calibration", "test", "recalibration"])
    s.add_argument("--param", type=_param, action="append", help="task parameter key=value")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    def with_config(name, func, help_text):
        c = sub.add_parser(name, help=help_text)
        c.add_argument("config")
        c.add_argument("--seed", type=int)
        c.add_argument("--out", help="output directory (overrides [output] directory)")
        c.set_defaults(func=func)
        return c

    c = with_config("train", cmd_train, "train mdn candidates and write checkpoints")
    c.add_argument("--steps", type=int)
    c = with_config("canvi", cmd_canvi, "run candidate selection and recalibration")
    c.add_argument("--alpha", type=float)
    c.add_argument("--steps", type=int)
    c = with_config("coverage", cmd_coverage, "conformal vs HDR coverage curves")
    c.add_argument("--candidate", type=int)
    c.add_argument("--steps", type=int)
    c = with_config("efficiency-trace", cmd_efficiency_trace, "region size across training checkpoints")
    c.add_argument("--candidate", type=int)
    c.add_argument("--every", type=int, help="checkpoint cadence in steps")
    c.add_argument("--alpha", type=float)
    c.add_argument("--steps", type=int)

    g = sub.add_parser("gaussian-verify", help="calibrated interval length vs phi on the bivariate Gaussian")
    g.add_argument("--rho", type=float, default=0.3)
    g.add_argument("--alpha", type=float, default=0.05)
    g.add_argument("--phi-step", type=float, default=0.01)
    g.add_argument("--replicates", type=int, default=20)
    g.add_argument("--n-calibration", type=int, default=10_000)
    g.add_argument("--n-test", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gaussian_verify)

    k = sub.add_parser("counterexample", help="exact and simulated region sizes of the discrete counterexample")
    k.add_argument("--b", type=float, required=True)
    k.add_argument("--alpha", type=float, required=True)
    k.add_argument("--replicates", type=int, default=20)
    k.add_argument("--n-calibration", type=int, default=10_000)
    k.add_argument("--seed", type=int, default=0)
    k.set_defaults(func=cmd_counterexample)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    if args.workers is not None and args.workers < 1:
        print("canvi: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, DomainError) as e:
        print(f"canvi: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as e:
        print(f"canvi: training failed at step {e.step}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SimulationError, PipelineError, FloatingPointError) as e:
        print(f"canvi: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"canvi: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except CanviError as e:
        print(f"canvi: error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
