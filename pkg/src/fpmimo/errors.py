"""Package-wide exception types."""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition of the called operation.

    Distinct from ``ValueError`` so callers can tell fpmimo contract checks
    apart from errors raised inside numpy/scipy.
    """


class FormatError(ContractViolation):
    """A floating-point format cannot be represented or emulated on the host."""
