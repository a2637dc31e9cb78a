"""Calibration of inference hyperparameters for generalised Bayesian updates."""

__version__ = "0.1.0"
