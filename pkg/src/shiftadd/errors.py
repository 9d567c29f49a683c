"""Exception hierarchy. Each class carries a category used for CLI exit codes."""


class ShiftAddError(Exception):
    category = "error"
    exit_code = 1


class GeometryError(ShiftAddError, ValueError):
    category = "geometry"
    exit_code = 3


class ConfigError(ShiftAddError, ValueError):
    category = "config"
    exit_code = 3


class FrozenUpdateError(ShiftAddError, RuntimeError):
    category = "frozen"
    exit_code = 3


class QuantizationError(ShiftAddError, ValueError):
    category = "quant"
    exit_code = 3


class EnergyLookupError(ShiftAddError, KeyError):
    category = "energy"
    exit_code = 3

    def __str__(self):
        # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class DataError(ShiftAddError, ValueError):
    category = "data"
    exit_code = 4


class IntegrityError(ShiftAddError, IOError):
    category = "integrity"
    exit_code = 5


class NumericalError(ShiftAddError, FloatingPointError):
    category = "numeric"
    exit_code = 6


class StaleCacheError(ShiftAddError, RuntimeError):
    category = "cache"
    exit_code = 6
