"""Circular-linear general projected normal hidden Markov models."""

__version__ = "0.1.0"
