"""Exception hierarchy. Each class carries a distinct process exit code."""


class LocAtlasError(Exception):
    code = 1


class SizeError(LocAtlasError, ValueError):
    code = 3


class CapacityError(SizeError):
    code = 4


class ParameterError(LocAtlasError, ValueError):
    code = 5


class GeometryError(LocAtlasError, ValueError):
    code = 6


class ShapeError(LocAtlasError, ValueError):
    code = 7


class NumericError(LocAtlasError, ArithmeticError):
    code = 8


class StateError(LocAtlasError, RuntimeError):
    code = 9


class ParseError(LocAtlasError, ValueError):
    code = 10

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(LocAtlasError, ValueError):
    code = 11

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CheckpointError(LocAtlasError):
    code = 20


class BadMagicError(CheckpointError):
    code = 21


class BadVersionError(CheckpointError):
    code = 22


class CrcMismatchError(CheckpointError):
    code = 23
