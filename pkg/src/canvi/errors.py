"""Exception hierarchy shared across the package."""


class CanviError(Exception):
    """Base class for all package errors."""


class DomainError(CanviError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SimulationError(CanviError):
    """A forward model produced a non-finite or invalid state."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class TrainingError(CanviError):
    """Optimization produced a non-finite loss."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class PipelineError(CanviError):
    """CANVI could not produce a predictor (e.g. every candidate failed)."""


class ConfigError(CanviError, ValueError):
    """Malformed or inconsistent experiment configuration."""
