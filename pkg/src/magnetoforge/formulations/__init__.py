"""Discrete formulations of nonlinear magnetostatics.

All three expose the problem interface consumed by
:func:`magnetoforge.solver.newton_solve`.
"""
from .common import ConfigurationError, Discretization, FieldState, assemble_matrix, assemble_vector
from .mixed import MixedFormulation, SaddleOperator, SchurSystem
from .scalar import ScalarFormulation
from .vector import Gauge, GaugeError, VectorFormulation, tree_cotree

FORMULATIONS = {"mixed": MixedFormulation, "scalar": ScalarFormulation, "vector": VectorFormulation}


def make_formulation(kind: str, mesh, p, laws, source):
    """Build a formulation; the vector potential one always uses p = 1."""
    if kind not in FORMULATIONS:
        raise ConfigurationError(f"unknown formulation {kind!r}")
    disc = Discretization(mesh, 1 if kind == "vector" else p, laws, source)
    return FORMULATIONS[kind](disc)


__all__ = [
    "ConfigurationError", "Discretization", "FieldState", "FORMULATIONS", "Gauge", "GaugeError",
    "MixedFormulation", "SaddleOperator", "ScalarFormulation", "SchurSystem", "VectorFormulation",
    "assemble_matrix", "assemble_vector", "make_formulation", "tree_cotree",
]
