"""Stochastic Volterra operator simulation and convergence diagnostics."""

__version__ = "0.1.0"
