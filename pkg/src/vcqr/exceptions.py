"""Typed errors raised by the estimation pipeline.

Every error carries a machine-readable ``category`` and the process exit
code the command line front end uses when it is not caught.
"""


class VCQRError(Exception):
    category = "error"
    exit_code = 3

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details


class UsageError(VCQRError, ValueError):
    category = "usage"
    exit_code = 1


class DomainError(UsageError):
    category = "domain"


class DataError(VCQRError, ValueError):
    category = "data"
    exit_code = 2


class DimensionMismatch(DataError):
    category = "dimension_mismatch"


class NonFinite(DataError):
    category = "non_finite"


class ParseError(DataError):
    category = "parse_error"


class MissingColumn(DataError):
    category = "missing_column"


class DegenerateWindow(DataError):
    category = "degenerate_window"


class NumericalError(VCQRError, ArithmeticError):
    category = "numerical"
    exit_code = 3


class NonConvergence(NumericalError):
    category = "non_convergence"


class InvalidScale(NumericalError):
    category = "invalid_scale"


class ZeroDesign(NumericalError):
    category = "zero_design"


class ZeroWeights(NumericalError):
    category = "zero_weights"


class BandwidthOverflow(NumericalError):
    category = "bandwidth_overflow"


class DegenerateResiduals(NumericalError):
    category = "degenerate_residuals"


class AllZeroDensity(NumericalError):
    category = "all_zero_density"


class UnboundedProgram(NumericalError):
    category = "unbounded_program"


class SingularV11(NumericalError):
    category = "singular_v11"


class SingularRefit(NumericalError):
    category = "singular_refit"


class DegenerateScoreCov(NumericalError):
    category = "degenerate_score_cov"


class NegativeVariance(NumericalError):
    category = "negative_variance"


class CalibrationFailure(NumericalError):
    category = "calibration_failure"


class VCQRWarning(UserWarning):
    """Recoverable numerical condition (clamped bandwidth, tie-broken fit)."""
