"""Experiment files: TOML in, fully explicit JSON echo out.

Precedence, highest first: command-line flags, the config file, built-in
defaults.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..conformal import DEFAULT_LEVELS
from ..errors import ConfigError
from ..pipeline import CanviConfig, TrainSettings

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUTPUT_ROOT_ENV = "CANVI_OUTPUT_ROOT"

_SECTIONS = {
    "task": {"name", "params"},
    "candidates": None,
    "conformal": {"alpha", "levels", "n_calibration", "n_test", "S", "M", "coverage_n_test",
                  "coverage_batches", "integrate_alpha", "candidate"},
    "train": {"steps", "batch", "lr", "checkpoint_every"},
    "output": {"directory", "save_datasets"},
    "seed": {"master"},
}


@dataclass
class ExperimentConfig:
    canvi: CanviConfig
    output_dir: Path
    save_datasets: bool = False
    candidate: int = 0

    def echo(self) -> dict:
        d = self.canvi.to_dict()
        return {
            "task": {"name": d["task"], "params": d["task_params"]},
            "candidates": d["candidates"],
            "conformal": {
                "alpha": d["alpha"], "levels": d["levels"], "n_calibration": d["n_calibration"],
                "n_test": d["n_test"], "S": d["S"], "M": d["hdr_M"], "coverage_n_test": d["coverage_n_test"],
                "coverage_batches": d["coverage_batches"], "integrate_alpha": d["integrate_alpha"],
                "candidate": self.candidate,
            },
            "train": d["train"],
            "output": {"directory": str(self.output_dir), "save_datasets": self.save_datasets},
            "seed": {"master": d["seed"]},
            "workers": d["workers"],
        }


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "canvi-runs"))


def _check_keys(name, section, allowed):
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")


def parse_config(doc: dict, source: str = "config", overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed TOML document.

    ``overrides`` holds command-line values (``seed``, ``alpha``, ``out``,
    ``workers``, ``steps``); ``None`` entries are ignored.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    for name, allowed in _SECTIONS.items():
        if allowed is not None and name in doc:
            _check_keys(name, doc[name], allowed)
    task = doc.get("task", {})
    if "name" not in task:
        raise ConfigError("[task] needs a name")
    cands = doc.get("candidates")
    if not isinstance(cands, list) or not cands:
        raise ConfigError("need at least one [[candidates]] entry")
    conf = doc.get("conformal", {})
    train = dict(doc.get("train", {}))
    if "steps" in overrides:
        train["steps"] = overrides["steps"]
    out = doc.get("output", {})
    seed = doc.get("seed", {}).get("master", 0)
    try:
        canvi = CanviConfig(
            task=str(task["name"]),
            task_params=dict(task.get("params", {})),
            candidates=cands,
            alpha=float(overrides.get("alpha", conf.get("alpha", 0.05))),
            n_calibration=int(conf.get("n_calibration", 10_000)),
            n_test=int(conf.get("n_test", 100)),
            S=int(conf.get("S", 10_000)),
            seed=int(overrides.get("seed", seed)),
            train=TrainSettings(**train),
            coverage_n_test=int(conf.get("coverage_n_test", 10_000)),
            coverage_batches=int(conf.get("coverage_batches", 10)),
            hdr_M=int(conf.get("M", 100)),
            levels=tuple(conf.get("levels", DEFAULT_LEVELS)),
            integrate_alpha=bool(conf.get("integrate_alpha", False)),
            workers=int(overrides.get("workers", 1)),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{source}: {e}") from None
    candidate = int(conf.get("candidate", 0))
    if not 0 <= candidate < len(canvi.candidates):
        raise ConfigError("[conformal] candidate index out of range")
    if "out" in overrides:
        out_dir = Path(overrides["out"])
    elif "directory" in out:
        out_dir = Path(out["directory"])
    else:
        out_dir = default_output_root() / Path(source).stem
    return ExperimentConfig(canvi, out_dir, bool(out.get("save_datasets", False)), candidate)


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
    return parse_config(doc, str(path), overrides)
