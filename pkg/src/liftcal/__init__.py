"""Functional lifting and calibration solver for free-boundary variational problems."""

from .grid import DomainError, GridSpec, Lattice, box_grid, divergence, gradient, make_grid
from .problem import Problem, ProblemError, alt_caffarelli_problem, make_integrand
from .solver import NumericalError, RunReport, SolverConfig, SolverError, run
from .analysis import (calibration_residuals, certified_dual, coarea_check, dual_objective,
                       duality_gap, extract_level, lifted_energy, primal_energy)

__all__ = [
    "DomainError", "GridSpec", "Lattice", "box_grid", "divergence", "gradient", "make_grid",
    "Problem", "ProblemError", "alt_caffarelli_problem", "make_integrand",
    "NumericalError", "RunReport", "SolverConfig", "SolverError", "run",
    "calibration_residuals", "certified_dual", "coarea_check", "dual_objective",
    "duality_gap", "extract_level", "lifted_energy", "primal_energy",
]
