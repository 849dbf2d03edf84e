"""Holomorphic embedding load flow for PQ/PV networks."""
from .netmodel import Network, build_ybus, load_case, parse_case
from .validate import SolutionReport, residual_bpee, solve_model

__all__ = ["Network", "build_ybus", "load_case", "parse_case", "SolutionReport", "residual_bpee",
           "solve_model"]
__version__ = "0.1.0"
