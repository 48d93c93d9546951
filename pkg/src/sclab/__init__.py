"""Numerical laboratory for stochastic scalar conservation laws on boxes."""

__version__ = "0.1.0"
