"""Finite-horizon time-crisis optimal control: crossing-structure solver and
first/second-order optimality-certificate verification."""

from ._backend import BACKEND as KERNEL_BACKEND
from .catalog import catalog, catalog_init, catalog_names, load_problem, problem_from_dict
from .errors import BlowupError, NonTransverseError, StructureError, TimeCrisisError
from .maps import PolynomialMap, SmoothMap
from .problem import ActiveSet, LIGReport, ProblemSpec, ValidationReport, check_LIG, validate_spec
from .simulate import (
    ControlSignal,
    CrossingStructure,
    Trajectory,
    crisis_cost,
    detect_crossings,
    integrate,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "SmoothMap",
    "PolynomialMap",
    "ProblemSpec",
    "ActiveSet",
    "ValidationReport",
    "LIGReport",
    "validate_spec",
    "check_LIG",
    "catalog",
    "catalog_init",
    "catalog_names",
    "load_problem",
    "problem_from_dict",
    "ControlSignal",
    "Trajectory",
    "CrossingStructure",
    "integrate",
    "detect_crossings",
    "crisis_cost",
    "TimeCrisisError",
    "BlowupError",
    "NonTransverseError",
    "StructureError",
    "__version__",
]
