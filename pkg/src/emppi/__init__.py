"""Ensemble model-predictive path integral control."""

__version__ = "0.1.0"
