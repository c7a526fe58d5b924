"""Reconstruction of a two-level atom's initial state from joint photon and atom statistics."""

__version__ = "0.1.0"

from .errors import (
    AllSingular,
    EmptySupport,
    JcmError,
    NoConventionMatches,
    NonConvergence,
    SingularDesign,
    SupportMismatch,
    UnphysicalBloch,
)
from .mlfit import CountRecord, MlOptions, MlSolution, ProbTable, distance_delta, ml_fit, u_vector
from .model import BlochVector, JcmConfig, MomentVector, SpinConvention, TimeGrid, auto_cutoff, poisson_weight, rabi_frequency
from .moments import DesignSystem, TimeNoise, averaged_determinant, build_design, determinant, moments
from .tomography import InversionResult, invert_moments, pick_time, scan_determinant

__all__ = [
    "AllSingular", "BlochVector", "CountRecord", "DesignSystem", "EmptySupport", "InversionResult",
    "JcmConfig", "JcmError", "MlOptions", "MlSolution", "MomentVector", "NoConventionMatches",
    "NonConvergence", "ProbTable", "SingularDesign", "SpinConvention", "SupportMismatch", "TimeGrid",
    "TimeNoise", "UnphysicalBloch", "auto_cutoff", "averaged_determinant", "build_design", "determinant",
    "distance_delta", "invert_moments", "ml_fit", "moments", "pick_time", "poisson_weight",
    "rabi_frequency", "scan_determinant", "u_vector",
]
