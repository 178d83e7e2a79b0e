"""Exception types shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class R4Error(Exception):
    exit_code = 1
    reason = "error"


class InvalidInput(R4Error, ValueError):
    exit_code = 2
    reason = "invalid_input"


class NotPositiveDefinite(R4Error, ArithmeticError):
    exit_code = 3
    reason = "not_positive_definite"


class Infeasible(R4Error, ArithmeticError):
    exit_code = 3
    reason = "infeasible"


class OutputError(R4Error, OSError):
    exit_code = 4
    reason = "io_error"
