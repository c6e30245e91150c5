"""Maximum compatibility estimation for inverse problems with complementary data modes."""

from .core import (
    FeasibilityRegion,
    IdealPoint,
    ModeSet,
    SCurve,
    SCurvePoint,
    apply_feasibility,
    chi_tot,
    continuity_diagnostic,
    mce_direct,
    mce_first_order,
    mcw,
    regularizer_mode_guard,
    single_mode_minima,
    trace_scurve,
)
from .gof import ModeEvaluator
from .optimizer import OptimizerOptions, minimize, multi_start

__version__ = "0.1.0"
