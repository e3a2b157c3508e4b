"""Exception hierarchy shared by every module.

Each error carries an ``exit_code`` used by the command-line front end:
1 for usage or configuration problems, 2 for data and file-format
problems, 3 for numerical failures.
"""


class EcaError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(EcaError):
    exit_code = 1


class ArchitectureError(ConfigError):
    exit_code = 1


class DataError(EcaError):
    exit_code = 2


class FormatError(DataError):
    """A file could not be parsed (bad magic, truncation, version mismatch)."""


class MismatchError(DataError):
    """Two related inputs disagree, e.g. image and label counts."""


class DegenerateSplit(DataError):
    """A class is missing from one side of a train/validation split."""


class EmptyAfterFilter(DataError):
    """Preprocessing removed every sample."""


class DimensionMismatch(DataError):
    """An input vector does not have the expected length."""


class NumericalError(EcaError):
    exit_code = 3


class ZeroVector(NumericalError):
    """A vector with (numerically) zero norm was asked to be normalized."""


class SingularMatrix(NumericalError):
    pass


class NotPure(EcaError):
    """An eigenvalue encoding is not a power of two."""

    exit_code = 3


class NoPureEigenfeatures(EcaError):
    exit_code = 3


class NoMappedEigenfeatures(EcaError):
    exit_code = 3
