"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
errors.py file for the exception hierarchy
--------------------------------------
Every exception raised by the library derives from SleepMetaError and carries
the exit code the command line maps it to.
"""


class SleepMetaError(Exception):
    """Base class for all library errors"""

    exit_code = 3


# --------------------------------
# Usage errors (exit 1)
# --------------------------------


class ConfigError(SleepMetaError):
    """Invalid configuration file, key or flag override"""

    exit_code = 1


# --------------------------------
# Data errors (exit 2)
# --------------------------------


class DataError(SleepMetaError):
    """Input data is missing, unreadable or malformed"""

    exit_code = 2


class EdfFormatError(DataError):
    """Malformed EDF stream, reported with the byte offset of the problem"""

    def __init__(self, message, offset=None, field=None):
        self.offset = offset
        self.field = field
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if offset is not None:
            where.append(f"byte offset {offset}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class CalibrationError(DataError):
    """Signal header cannot define a linear digital→physical map"""


class HypnogramError(DataError):
    """Hypnogram source cannot be decoded"""


class PrepError(DataError):
    """Preprocessing cannot produce samples from a recording"""


class TaskSamplingError(DataError):
    """Tasks cannot be drawn from a dataset"""


# --------------------------------
# Internal invariant violations (exit 3)
# --------------------------------


class InvariantError(SleepMetaError):
    """An internal contract was broken"""

    exit_code = 3


class ShapeError(InvariantError):
    """Operands of a differentiable primitive have incompatible shapes"""

    def __init__(self, primitive, message, dims=None):
        self.primitive = primitive
        self.dims = dims
        detail = f" dims={dims}" if dims is not None else ""
        super().__init__(f"{primitive}: {message}{detail}")


class NumericError(InvariantError):
    """A non-finite value appeared while checked mode is on"""


class TapeError(InvariantError):
    """Reverse pass requested on an empty or stale tape"""
