"""Conformalized amortized posterior approximators."""

__version__ = "0.1.0"
