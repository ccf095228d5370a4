"""Spectral analysis and localization checks for two-state-per-axis split-step
quantum walks on ``Z^d`` with a single defect coin at the origin."""

from .model import (
    CoinScheme, DerivedScalars, ModelError, ShiftParams, ValidationReport,
    derived_scalars, full_validation, single_axis_example, validate_params,
)
from .evolution import LatticeBox, LatticeState, LightConeError, evolve, return_probability_series
from .discriminant import oracle_point_spectrum, truncated_matrix
from .analysis import (
    DomainError, GapFunction, QuadratureError, QuadratureSpec, criteria_check,
    f_of_lambda, f_prime, find_zero, psi_lambda_at, search_gap,
)
from .spectral_map import SpectralReport, assemble_report, g_pm, verify_on_truncation

__version__ = "0.1.0"

__all__ = [
    "CoinScheme", "DerivedScalars", "ModelError", "ShiftParams", "ValidationReport",
    "derived_scalars", "full_validation", "single_axis_example", "validate_params",
    "LatticeBox", "LatticeState", "LightConeError", "evolve", "return_probability_series",
    "oracle_point_spectrum", "truncated_matrix",
    "DomainError", "GapFunction", "QuadratureError", "QuadratureSpec", "criteria_check",
    "f_of_lambda", "f_prime", "find_zero", "psi_lambda_at", "search_gap",
    "SpectralReport", "assemble_report", "g_pm", "verify_on_truncation",
]
