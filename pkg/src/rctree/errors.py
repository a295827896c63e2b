"""Exception hierarchy shared by the library and the command line.

Each class carries the process exit code the CLI maps it to.
"""


class RCTError(Exception):
    exit_code = 1


class StructuralError(RCTError, ValueError):
    """Reference to a node or shape that does not exist in the tree."""

    exit_code = 2


class ConfigError(RCTError, ValueError):
    exit_code = 2


class DataError(RCTError, ValueError):
    exit_code = 3


class InfeasibleError(RCTError, ValueError):
    exit_code = 2


class NumericalError(RCTError, ArithmeticError):
    exit_code = 4
