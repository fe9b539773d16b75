"""Benchmark generative tasks: priors, forward models and joint sampling."""

from ..errors import DomainError
from .base import ROLES, JointDataset, TaskSpec, sample_joint
from .ode import SIR, LotkaVolterra, rk4
from .simple import (
    BivariateGaussian,
    DiscreteUniformMixture,
    GaussianLinear,
    GaussianLinearUniform,
    GaussianMixture,
    TwoMoons,
    two_moons_map,
)
from .structured import ARCH, BernoulliGLMRaw, SLCPDistractors, arch_log_likelihood, arch_series

TASKS = {
    cls.name: cls
    for cls in (
        GaussianLinear,
        GaussianLinearUniform,
        SLCPDistractors,
        BernoulliGLMRaw,
        GaussianMixture,
        TwoMoons,
        SIR,
        LotkaVolterra,
        ARCH,
        BivariateGaussian,
        DiscreteUniformMixture,
    )
}


def make_task(name: str, **params) -> TaskSpec:
    """Instantiate a registered task by name."""
    try:
        cls = TASKS[name]
    except KeyError:
        raise DomainError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None
    return cls(**params)


__all__ = [
    "ARCH",
    "BernoulliGLMRaw",
    "BivariateGaussian",
    "DiscreteUniformMixture",
    "GaussianLinear",
    "GaussianLinearUniform",
    "GaussianMixture",
    "JointDataset",
    "LotkaVolterra",
    "ROLES",
    "SIR",
    "SLCPDistractors",
    "TASKS",
    "TaskSpec",
    "TwoMoons",
    "arch_log_likelihood",
    "arch_series",
    "make_task",
    "rk4",
    "sample_joint",
    "two_moons_map",
]
