"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigError(ContractViolation):
    """Invalid configuration; carries a path into the offending entry."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class BudgetError(ContractViolation):
    """A run would exceed the configured compute/memory budget."""


class NumericalAbort(RuntimeError):
    """A solver or integrator produced non-finite values."""
