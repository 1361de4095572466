"""Lie symmetries, Noether conservation laws and a finite-difference solver for 1-D MFG systems."""

from .grid import AnalyticField, Field2D, GridSpec, JetPoint
from .model import (CouplingSpec, HamiltonianSpec, ProblemSpec, TransformRecord, gamma_star,
                    normalize_hamiltonian)
from .noether import (ConservationLaw, catalog_conservation_laws, conserved_integral,
                      divergence_residual, noether_current, noether_identity_defect)
from .solver import PicardConfig, SolutionPair, SolveReport, solve_picard
from .symmetry import (FlowRequest, Generator, catalog_generators, determining_residuals,
                       group_flow, prolong, variational_defect)

__all__ = [
    "AnalyticField", "Field2D", "GridSpec", "JetPoint",
    "CouplingSpec", "HamiltonianSpec", "ProblemSpec", "TransformRecord", "gamma_star",
    "normalize_hamiltonian",
    "ConservationLaw", "catalog_conservation_laws", "conserved_integral",
    "divergence_residual", "noether_current", "noether_identity_defect",
    "PicardConfig", "SolutionPair", "SolveReport", "solve_picard",
    "FlowRequest", "Generator", "catalog_generators", "determining_residuals", "group_flow",
    "prolong", "variational_defect",
]
