"""Candidate posterior approximators and their training."""

from .base import PosteriorModel
from .checkpoint import FAMILIES, load_model, model_from_dict, model_to_dict, save_model
from .families import ConditionalLinearGaussian, ConditionalUniform, DispersionScaled, PriorModel
from .mdn import MixtureDensityNetwork, SupportTransform
from .training import Adam, TrainResult, smoothed, train_favi

__all__ = [
    "Adam",
    "ConditionalLinearGaussian",
    "ConditionalUniform",
    "DispersionScaled",
    "FAMILIES",
    "MixtureDensityNetwork",
    "PosteriorModel",
    "PriorModel",
    "SupportTransform",
    "TrainResult",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "save_model",
    "smoothed",
    "train_favi",
]
