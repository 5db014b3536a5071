"""Exception taxonomy shared across the package.

Each class maps to one failure category so callers (and the CLI) can react
by kind instead of string-matching messages.
"""


class QuatvioError(Exception):
    """Base class for all package errors."""


class InvalidInputError(QuatvioError):
    """Arguments are malformed: wrong shape, non-finite, out of range."""


class InvalidStepError(QuatvioError):
    """A propagation step has a non-positive or implausibly large dt."""


class NumericalError(QuatvioError):
    """A linear-algebra routine failed beyond recovery (Cholesky, expm)."""


class ConfigError(QuatvioError):
    """Configuration values are inconsistent or unparseable."""


class DataError(QuatvioError):
    """Input data violates the format contract (order, norms, duplicates)."""


class ParseError(DataError):
    """A data file row could not be parsed; message names the line."""


class EmptySequenceError(DataError):
    """A loaded sequence contains no usable rows."""


class InsufficientDataError(QuatvioError):
    """Not enough samples to evaluate a detector or statistic."""


class EmptyAssociationError(QuatvioError):
    """Trajectory association produced zero pairs."""


class DegenerateAlignmentError(QuatvioError):
    """Point sets are too degenerate for a unique rigid alignment."""


class DivergenceError(QuatvioError):
    """The filter produced a correction outside its validity region."""
