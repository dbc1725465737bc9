"""Exception types raised across the package.

Each maps onto a CLI exit code via ``exit_code``: 2 config, 3 data, 4 numerical.
"""


class MfuqError(Exception):
    exit_code = 1


class ConfigError(MfuqError, ValueError):
    exit_code = 2


class DataError(MfuqError, ValueError):
    exit_code = 3


class NumericalError(MfuqError, ArithmeticError):
    exit_code = 4


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyBatch(DataError):
    pass


class EmptyHeldout(DataError):
    pass


class InsufficientSamples(DataError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class CountMismatch(DataError):
    pass


class StaleCurvature(DataError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NegativeVariance(NumericalError):
    pass


class NegativeDifferenceVariance(NumericalError):
    pass


class ZeroMass(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")
