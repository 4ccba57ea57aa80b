"""Sparsity-regularised reconstruction for electrical impedance tomography with partial data."""

__version__ = "0.1.0"

from .fem import NeumannSystem, assemble_mass, assemble_stiffness
from .forward import CauchyDataSet, ForwardModel, discrepancy, nd_apply, simulate_cauchy_data
from .mesh import BoundarySubset, SimplicialMesh, generate_ball_mesh
from .patterns import build_phantom, default_phantom, make_patterns, prior_field
from .reconstruct import RegularizationPlan, SolverConfig, run

__all__ = [
    "BoundarySubset",
    "CauchyDataSet",
    "ForwardModel",
    "NeumannSystem",
    "RegularizationPlan",
    "SimplicialMesh",
    "SolverConfig",
    "assemble_mass",
    "assemble_stiffness",
    "build_phantom",
    "default_phantom",
    "discrepancy",
    "generate_ball_mesh",
    "make_patterns",
    "nd_apply",
    "prior_field",
    "run",
    "simulate_cauchy_data",
]
