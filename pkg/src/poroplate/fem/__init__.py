"""Element kernels, assembly, constraints, and linear solvers."""

from .assembly import (
    assemble_body_force,
    assemble_divergence_coupling,
    assemble_elastic_stiffness,
    assemble_scalar_diffusion,
    assemble_scalar_mass,
    assemble_scalar_source,
    assemble_strain_product,
    assemble_vector_gradient_product,
    lumped_weights,
    vector_dofs,
)
from .constraints import ConstraintSet, Reducer
from .solvers import DenseFactor, RepeatedBlockSolver, pcg, solve_saddle, solve_spd

__all__ = [
    "assemble_body_force",
    "assemble_divergence_coupling",
    "assemble_elastic_stiffness",
    "assemble_scalar_diffusion",
    "assemble_scalar_mass",
    "assemble_scalar_source",
    "assemble_strain_product",
    "assemble_vector_gradient_product",
    "lumped_weights",
    "vector_dofs",
    "ConstraintSet",
    "Reducer",
    "DenseFactor",
    "RepeatedBlockSolver",
    "pcg",
    "solve_saddle",
    "solve_spd",
]
