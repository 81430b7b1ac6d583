"""Invertible neural transport maps for Bayesian posterior sampling and filtering."""

__version__ = "0.1.0"
