"""Exception hierarchy.

Every error carries a dotted ``category`` string which the CLI prints on
failure so callers can dispatch on it without parsing messages.
"""


class CXVError(Exception):
    category = "internal"


class DimensionError(CXVError, ValueError):
    category = "dimension"


class ParameterError(CXVError, ValueError):
    category = "parameter"


class DataError(CXVError, ValueError):
    category = "data"


class FormatError(DataError):
    category = "data.format"


class UsageError(CXVError, RuntimeError):
    category = "usage"


class ConfigError(CXVError, ValueError):
    category = "config"


class NumericalError(CXVError, ArithmeticError):
    category = "numerical"


class DegeneracyError(NumericalError):
    category = "numerical.degeneracy"


class DivergenceError(NumericalError):
    category = "numerical.divergence"


class CheckpointError(CXVError, OSError):
    category = "io.checkpoint"


class DatasetIOError(CXVError, OSError):
    category = "io.data"
