"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and NumericError (plus its
subclasses) to exit code 3.
"""


class SpecmixError(Exception):
    """Base class for all package errors."""


class ConfigError(SpecmixError, ValueError):
    """Invalid configuration value or missing required field."""


class DegenerateDataError(SpecmixError, ValueError):
    """Dataset too small or degenerate for the requested estimate."""


class InsufficientLengthError(SpecmixError, ValueError):
    """Document has fewer than the minimum number of tokens."""

    def __init__(self, message, doc_index=None):
        super().__init__(message)
        self.doc_index = doc_index


class ShapeMismatchError(SpecmixError, ValueError):
    """Operands have incompatible shapes."""


class NumericError(SpecmixError, RuntimeError):
    """Numerical failure (non-finite values, ill-conditioning, ...)."""


class RankDeficiencyError(NumericError):
    """Second moment has fewer usable directions than components requested."""

    def __init__(self, message, singular_values=None):
        super().__init__(message)
        self.singular_values = singular_values


class UnrecoverableComponentError(NumericError):
    """A tensor eigenvalue is too small to invert into model parameters."""


class DegenerateSpectrumError(NumericError):
    """Eigenvalue gap too small for a stable analytic gradient.

    The finite-difference gradient mode does not share this failure mode
    and can be used as a fallback.
    """


class TreeParseError(ConfigError):
    """Malformed heading line in a taxonomy file."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number
