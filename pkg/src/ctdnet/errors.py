"""Exception hierarchy. The CLI maps these onto exit codes."""


class CTDError(Exception):
    exit_code = 1


class ShapeError(CTDError, ValueError):
    """Operand extents are incompatible with the requested operation."""


class ConfigError(CTDError, ValueError):
    pass


class UsageError(CTDError, RuntimeError):
    pass


class ValidationError(CTDError, ValueError):
    pass


class UnsupportedForwardError(CTDError, NotImplementedError):
    """Raised when a structural-only backbone is asked to compute real values."""


class GenerationError(CTDError, RuntimeError):
    pass


class DataIOError(CTDError, OSError):
    exit_code = 2

    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class NumericalError(CTDError, FloatingPointError):
    exit_code = 3
