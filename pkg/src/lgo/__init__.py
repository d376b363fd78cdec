"""Solver and certificate checks for the anisotropic obstacle least-gradient problem."""
from .grid import Cell, Grid2, ProblemSpec
from .metric import MetricField, MetricKind
from .solver import CertificateReport, Solution, SolverParams, extract_certificate, solve_relaxed

__all__ = [
    "Cell",
    "CertificateReport",
    "Grid2",
    "MetricField",
    "MetricKind",
    "ProblemSpec",
    "Solution",
    "SolverParams",
    "extract_certificate",
    "solve_relaxed",
]
__version__ = "0.1.0"
