"""Contextual Bayesian tuning of a contouring controller on a simulated RC car."""

__version__ = "0.1.0"
