"""Exception hierarchy shared by the library and the command line."""


class DLFHError(Exception):
    """Base class for all toolkit errors."""


class ContractError(DLFHError, ValueError):
    """An argument violates an operation's precondition (shape, range, domain)."""


class ConfigError(DLFHError, ValueError):
    """Inconsistent or out-of-range hyper-parameters or CLI configuration."""


class LoadError(DLFHError):
    """A data, code or model file could not be read."""


class FormatError(LoadError):
    """A binary file has a bad magic, version or header."""


class NonFiniteError(LoadError):
    """A loaded matrix contains NaN or infinite entries."""

    def __init__(self, path, row, col):
        self.path, self.row, self.col = path, row, col
        super().__init__(f"{path}: non-finite value at row {row}, column {col}")


class SingularSystemError(DLFHError, ArithmeticError):
    """The regularized normal equations are not positive definite."""


class EvaluationError(DLFHError):
    """No query has a relevant item, so MAP is undefined."""
