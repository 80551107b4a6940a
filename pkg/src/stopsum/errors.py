"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input: malformed spec strings, parameters out of domain."""


class DivergenceError(ArithmeticError):
    """A tail integral or series fails to converge within its budget."""


class ResourceBudgetError(RuntimeError):
    """A computation would exceed its configured cell or truncation budget."""


class InapplicableError(RuntimeError):
    """A criterion's precondition does not hold for the given distribution."""


class InvalidEstimateError(RuntimeError):
    """A Monte Carlo estimate is dominated by truncation-cap breaches."""
