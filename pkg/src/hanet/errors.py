"""Exception hierarchy shared by every hanet module."""


class HanetError(Exception):
    """Base class for all errors raised by hanet."""


class DimensionError(HanetError, ValueError):
    """Operand shapes are incompatible."""


class InvalidMaskError(HanetError, ValueError):
    """A masked softmax was asked to normalise over an empty set."""


class ContractError(HanetError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(HanetError, ValueError):
    """A configuration value is out of range or inconsistent."""


class MetaPathError(HanetError, ValueError):
    """A meta-path string cannot be resolved against a schema."""


class NumericalError(HanetError, ArithmeticError):
    """A loss or gradient became non-finite."""


class LoadError(HanetError):
    """A graph directory or checkpoint could not be read.

    ``path`` and ``line`` point at the offending location when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = str(path) if line is None else f"{path}:{line}"
            where += ": "
        super().__init__(where + message)
