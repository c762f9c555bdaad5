"""Stochastic bin packing of data-center tasks with a Gaussian percentile fit test."""

__version__ = "0.1.0"
