"""Exception types raised by the pipeline.

Every error carries a short ``stage`` tag so the CLI can map it to an exit
status without string matching.
"""


class CareError(Exception):
    """Base class for all pipeline errors."""

    stage = "pipeline"


class ConfigurationError(CareError, ValueError):
    stage = "config"


class DomainError(CareError, ValueError):
    """An argument lies outside the domain of the operation."""

    stage = "config"


class ParseError(CareError, ValueError):
    stage = "parse"


class EmptyInputError(ParseError):
    pass


class InsufficientOverlapError(CareError):
    stage = "harmonize"


class InsufficientInstrumentsError(CareError):
    stage = "selection"


class NumericalError(CareError, ArithmeticError):
    stage = "selection"


class DegenerateInstrumentsError(CareError):
    stage = "estimate"


class WeakInstrumentError(CareError):
    """Bias-corrected second moment of the valid set is not positive."""

    stage = "screening"


class ScreeningFailedError(CareError):
    stage = "screening"


class UnstableEstimateError(CareError):
    stage = "estimate"

    def __init__(self, message, fraction=None):
        super().__init__(message)
        self.fraction = fraction
