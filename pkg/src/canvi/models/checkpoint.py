"""Self-describing JSON checkpoints for candidate models.

Floats are written with ``repr`` precision (JSON's default), so a load
reproduces every parameter, and hence every log-density, bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import CanviError, DomainError
from .base import PosteriorModel
from .families import ConditionalLinearGaussian, ConditionalUniform, DispersionScaled, PriorModel
from .mdn import MixtureDensityNetwork

FORMAT = "canvi-model"
VERSION = 1

FAMILIES = {
    cls.family: cls
    for cls in (ConditionalLinearGaussian, ConditionalUniform, DispersionScaled, PriorModel, MixtureDensityNetwork)
}


def model_to_dict(model: PosteriorModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "family": model.family,
        "theta_dim": model.theta_dim,
        "x_dim": model.x_dim,
        "state": model.to_dict(),
    }


def model_from_dict(d: dict) -> PosteriorModel:
    if d.get("format") != FORMAT:
        raise DomainError("not a model checkpoint")
    if d.get("version") != VERSION:
        raise DomainError(f"unsupported checkpoint version {d.get('version')!r}")
    try:
        cls = FAMILIES[d["family"]]
    except KeyError:
        raise DomainError(f"unknown model family {d.get('family')!r}") from None
    model = cls.from_dict(d["state"])
    if (model.theta_dim, model.x_dim) != (d["theta_dim"], d["x_dim"]):
        raise DomainError("checkpoint header dimensions disagree with its state")
    return model


def save_model(model: PosteriorModel, path, extra: dict | None = None) -> None:
    doc = model_to_dict(model)
    if extra:
        doc["meta"] = extra
    Path(path).write_text(json.dumps(doc, allow_nan=False) + "\n")


def load_model(path) -> PosteriorModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CanviError(f"{path}: malformed checkpoint ({e})") from None
    return model_from_dict(doc)
