"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class LobexecError(Exception):
    exit_code = 1


class ConfigError(LobexecError, ValueError):
    exit_code = 2


class DomainError(LobexecError, ValueError):
    exit_code = 2


class DataError(LobexecError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StructuralError(DataError):
    pass


class DegenerateVolumeError(DataError):
    pass


class ContractViolation(LobexecError):
    exit_code = 4


class NumericalError(LobexecError, ArithmeticError):
    exit_code = 4
