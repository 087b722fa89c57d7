"""Exception types shared across the package.

Plain ``ValueError`` is used for caller mistakes at construction time; the
classes here mark failures that the command line maps to distinct exit codes.
"""


class FlipsimError(Exception):
    """Base class for package-specific failures."""


class ConfigError(FlipsimError):
    """Invalid or unparseable run configuration.

    Carries an optional ``location`` string ("file:line") so messages point
    at the offending entry.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class NumericalError(FlipsimError):
    """Numerical integrity violation (instability, residuals, lost trace)."""


class IntegrationError(NumericalError):
    """Propagator produced a growing norm or otherwise went unstable."""


class DegenerateSteadyStateError(NumericalError):
    """Steady-state null space has dimension > 1; carries a basis."""

    def __init__(self, message, basis):
        super().__init__(message)
        self.basis = basis


class TailNotConvergedError(NumericalError):
    """Truncated sum retains too much tail mass; a larger n_max is needed."""


class FitError(NumericalError):
    """Exponential fit failed to converge or data carry no decay."""


class ValidationFailure(FlipsimError):
    """Cross-check suite (trajectory vs master equation) found a mismatch."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
