"""Exception hierarchy shared by all modules."""


class CellbenchError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(CellbenchError, ValueError):
    """Malformed matrix/ops shape."""


class InvalidSpecError(CellbenchError, ValueError):
    """Operation requires a valid spec (input->output path, at most 9 edges)."""


class MutationError(CellbenchError, RuntimeError):
    pass


class CorruptIndexError(CellbenchError, ValueError):
    pass


class SchemaError(CellbenchError, ValueError):
    pass


class CompletenessError(CellbenchError, ValueError):
    def __init__(self, message, gaps=()):
        super().__init__(message)
        self.gaps = list(gaps)


class UnknownArchitectureError(CellbenchError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown architecture"


class ConfigurationError(CellbenchError, ValueError):
    pass


class UndefinedStatisticError(CellbenchError, ValueError):
    """A correlation or autocorrelation is undefined (zero variance, too few points)."""
