"""Nonlinear magnetostatics with mixed, scalar potential and vector potential
finite element formulations."""

__version__ = "0.1.0"
