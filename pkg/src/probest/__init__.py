"""Randomness certification for Bell tests by probability estimation."""

__version__ = "0.1.0"
