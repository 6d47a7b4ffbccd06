"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Matrix shapes are inconsistent, empty, or contain non-finite entries."""


class DivergenceError(RuntimeError):
    """Training or integration produced a non-finite state.

    Carries the iteration (or step) index at which the blow-up was detected.
    """

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class DegenerateCertificateError(RuntimeError):
    """A theory constant came out degenerate (e.g. rank-deficient features)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnusableOrderError(ValueError):
    """The requested Hermite order has a vanishing coefficient.

    ``next_order`` points at the smallest larger order with a nonzero
    coefficient, or None if there is none within the expansion.
    """

    def __init__(self, message, next_order=None):
        super().__init__(message)
        self.next_order = next_order


class InfeasibleDataError(RuntimeError):
    """No Khatri-Rao order yields a nonsingular Gram for this data."""


class EstimationError(RuntimeError):
    """A numerical estimate excluded too many grid points to be trusted."""


class IdxFormatError(ValueError):
    """An IDX file failed to parse (bad magic, truncated payload, ...)."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or carries unknown keys."""
