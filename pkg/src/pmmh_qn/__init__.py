"""Correlated pseudo-marginal Metropolis-Hastings with quasi-Newton proposals."""

__version__ = "0.1.0"
