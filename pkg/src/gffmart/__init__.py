"""Gaussian free fields, resampling dynamics and stochastic heat equation tools."""

__version__ = "0.1.0"
