"""Exception hierarchy.

Each family carries the CLI exit code it maps to: 2 for configuration
problems, 3 for data problems, 4 for numeric failures.
"""


class EEPoseError(Exception):
    exit_code = 1


class ConfigError(EEPoseError, ValueError):
    exit_code = 2


class DataError(EEPoseError, ValueError):
    exit_code = 3


class NumericError(EEPoseError, ArithmeticError):
    exit_code = 4


class DegenerateInput(NumericError):
    pass


class EmptyInput(DataError):
    pass


class EmptyCloud(DataError):
    pass


class SizeMismatch(DataError):
    pass


class TooLarge(DataError):
    pass


class InsufficientData(DataError):
    pass


class EmptyTestSplit(DataError):
    pass


class MissingInput(DataError):
    pass


class ModelMissing(DataError):
    pass


class FormatError(DataError):
    pass


class ShapeMismatch(NumericError):
    pass


class NonConvergence(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class NonFiniteState(NumericError):
    pass
