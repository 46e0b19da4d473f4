"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes and machine-readable error JSON:
ParameterError / FormatError -> exit 2, NumericalError -> exit 3.
"""


class CfmarError(Exception):
    """Base class; carries a short machine-readable code."""

    code = "error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ParameterError(CfmarError):
    """Invalid user-supplied parameter or configuration."""

    code = "invalid_parameter"


class ContractError(CfmarError):
    """Inputs violate an operation's precondition (kind/grid/geometry mismatch)."""

    code = "contract_violation"


class FormatError(CfmarError):
    """On-disk data is malformed or inconsistent with its sidecar."""

    code = "format_error"


class NumericalError(CfmarError):
    """A numerical stage failed to converge or produced non-finite values."""

    code = "numerical_failure"
