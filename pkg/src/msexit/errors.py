"""Exception hierarchy shared by every module of the package."""


class MsexitError(Exception):
    """Base class for all package errors."""


class InvalidFieldError(MsexitError, ValueError):
    """A periodic field has the wrong length or non-finite samples."""


class DomainError(MsexitError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ConfigurationError(MsexitError, ValueError):
    """Inconsistent parameters (regime exponents, missing tables, bad config)."""


class PreconditionError(MsexitError, ValueError):
    """A mathematical precondition of the operation does not hold."""


class SolverError(MsexitError, RuntimeError):
    """A linear solve or quadrature failed."""


class UnsolvableError(SolverError):
    """Fredholm solvability fails (e.g. the centering residual is too large)."""


class ExtrapolationError(MsexitError, ValueError):
    """A tabulated quantity was requested outside its tabulation range."""


class NoExitError(MsexitError, RuntimeError):
    """A trajectory did not reach the boundary within the horizon."""


class TangencyError(MsexitError, ValueError):
    """The effective flow meets the boundary (almost) tangentially."""


class UnsupportedRegimeError(MsexitError, ValueError):
    """The requested limit law does not apply in the configured regime."""


class BudgetError(MsexitError, RuntimeError):
    """The configured step budget would be exceeded."""


class BlowUpError(MsexitError, FloatingPointError):
    """A simulated state became non-finite."""


class SampleSizeError(MsexitError, ValueError):
    """Too few samples for the requested statistic."""


class SingularIntegrandError(MsexitError, ValueError):
    """An integrand has a non-integrable singularity in the range."""
