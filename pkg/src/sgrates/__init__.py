"""Stochastic gradient search with diminishing steps: simulation, Lojasiewicz
exponents and empirical convergence-rate checks."""

__version__ = "0.1.0"
