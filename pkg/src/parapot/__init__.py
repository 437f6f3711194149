"""Parabolic potentials, heat kernels and measure-data semilinear heat solvers."""

from .constants import ConstantsTable, build_table
from .grids import CellGrid, SpaceTimeGrid
from .kernels import GreenConfig, apply_G, duhamel, gauss, green_box
from .measures import (Domain, ParabolicCylinder, SpaceTimeMeasure, SpatialMeasure, StepProfile,
                       mollify_spacetime, mollify_spatial)
from .nonlinearity import ExpNonlinearity, g_ell
from .potentials import PotentialField, PotentialParams, field, max1, max2, wolff, wolff_atomic
from .solver import (ProblemSpec, Solution, SolverParams, check_uniqueness, solve, solve_absorption,
                     solve_linear, solve_source_picard, weak_residual)

__version__ = "0.1.0"

__all__ = [
    "CellGrid", "ConstantsTable", "Domain", "ExpNonlinearity", "GreenConfig", "ParabolicCylinder",
    "PotentialField", "PotentialParams", "ProblemSpec", "Solution", "SolverParams", "SpaceTimeGrid",
    "SpaceTimeMeasure", "SpatialMeasure", "StepProfile", "apply_G", "build_table", "check_uniqueness",
    "duhamel", "field", "g_ell", "gauss", "green_box", "max1", "max2", "mollify_spacetime",
    "mollify_spatial", "solve", "solve_absorption", "solve_linear", "solve_source_picard",
    "weak_residual", "wolff", "wolff_atomic",
]
