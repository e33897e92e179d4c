"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` used by the CLI:
1 = usage/config error, 2 = data/schema error, 3 = numerical failure.
"""


class HexRegError(Exception):
    exit_code = 3


class UsageError(HexRegError):
    exit_code = 1


class DataError(HexRegError):
    exit_code = 2


class NumericalError(HexRegError):
    exit_code = 3


# -- usage / config ------------------------------------------------------

class BadConfig(UsageError):
    pass


class BadParams(UsageError):
    pass


class BadDims(UsageError):
    pass


class BadAlpha(UsageError):
    pass


class BadTemperature(UsageError):
    pass


class TauOne(UsageError):
    pass


# -- data / schema / io --------------------------------------------------

class IoError(DataError):
    pass


class SchemaError(DataError):
    pass


class VersionMismatch(DataError):
    pass


class MissingLabels(DataError):
    pass


class InsufficientSamples(DataError):
    pass


class EmptyTrainSet(DataError):
    pass


# -- numerical -----------------------------------------------------------

class ZeroRow(NumericalError):
    pass


class NotNormalized(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class EmptyBatch(NumericalError):
    pass


class DegenerateBatch(NumericalError):
    pass


class EmptyH(NumericalError):
    pass


class EmptyQueue(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


class ZeroMatrix(NumericalError):
    pass


class DegenerateDistribution(NumericalError):
    pass


class NonPositiveDenominator(NumericalError):
    pass
