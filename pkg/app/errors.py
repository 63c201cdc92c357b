"""
Exception hierarchy for netglm.

Argument problems subclass ValueError and numerical or runtime failures
subclass RuntimeError, so callers that only catch builtin exceptions keep
working.
"""

from typing import Optional


class NetGlmError(Exception):
    """Base class for all netglm errors."""


class ArgumentError(NetGlmError, ValueError):
    """Invalid argument: out-of-range ids, bad dimensions, bad parameters."""


class InsufficientDataError(NetGlmError, ValueError):
    """Too few vertices or observations for the requested operation."""


class DegenerateDimensionError(NetGlmError, ValueError):
    """d < 2: log d vanishes and the constraint radii collapse."""


class DegenerateTargetError(ArgumentError):
    """Functional target t = 0 (e.g. theta_tilde = 0 in quadratic inference)."""


class NotPositiveDefiniteError(ArgumentError):
    """Cholesky factorization failed."""


class ResourceError(NetGlmError, ValueError):
    """Request exceeds a hard resource limit (e.g. exact enumeration for n > 20)."""


class GenerationFailureError(NetGlmError, RuntimeError):
    """Random graph generation exhausted its attempt budget."""


class NumericError(NetGlmError, RuntimeError):
    """NaN or infinity encountered in an objective or constraint."""


class DegenerateVarianceError(NetGlmError, RuntimeError):
    """Estimated variance is zero."""


class ProjectionInfeasibleError(NetGlmError, RuntimeError):
    """Projection QP stayed infeasible after the maximum number of inflations."""

    def __init__(self, message: str, residuals: Optional[dict] = None):
        super().__init__(message)
        self.residuals = residuals or {}


class PipelineError(NetGlmError, RuntimeError):
    """A pipeline stage failed; `stage` names the stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class ExperimentError(NetGlmError, RuntimeError):
    """Every replicate of an experiment failed."""
