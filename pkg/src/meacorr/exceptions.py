"""Exception hierarchy shared by every estimator in the package."""


class MeacorrError(Exception):
    """Base class for all package errors."""


class ConfigError(MeacorrError, ValueError):
    """Inconsistent configuration, spec or method selection."""


class PanelParseError(ConfigError):
    """Malformed panel file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(MeacorrError, ValueError):
    """Data violate a panel invariant (non-finite values, empty rows...)."""


class IdentifiabilityError(MeacorrError):
    """A required pair of proxies is never co-observed."""

    def __init__(self, pair, count):
        self.pair = pair
        self.count = count
        j, l = pair
        super().__init__(
            f"proxies {j + 1} and {l + 1} are co-observed on {count} subjects (need >= 2)"
        )


class IdentificationError(MeacorrError):
    """A matrix required by the identification formulas is singular."""


class ModelViolationError(MeacorrError):
    """Estimated moments are incompatible with the assumed error model."""


class InferenceError(MeacorrError):
    """Sandwich matrices could not be formed (singular bread)."""

    def __init__(self, message, rank=None):
        self.rank = rank
        if rank is not None:
            message = f"{message} (rank {rank})"
        super().__init__(message)


class FitError(MeacorrError):
    """Root finding for an outcome model failed."""

    def __init__(self, message, theta=None):
        self.theta = theta
        super().__init__(message)


class SeparationError(FitError):
    """Logistic outcome is (quasi-)separated by the covariates."""


class CalibrationError(MeacorrError):
    """The calibration (BLUP) system for a pattern is singular."""


class ExtrapolationError(MeacorrError):
    """The fitted extrapolant cannot be evaluated at lambda = -1."""


class EstimationError(MeacorrError):
    """Auxiliary parameters could not be estimated from the data."""


class DiagnosticError(MeacorrError):
    """Not enough data for a diagnostic."""
