"""Exception hierarchy shared across the package."""


class PoissonConcError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(PoissonConcError, ValueError):
    pass


class UnsupportedGeometryError(PoissonConcError):
    pass


class UnsupportedDimensionError(PoissonConcError):
    pass


class DivergentIntegralError(PoissonConcError, ArithmeticError):
    pass


class DivergentMeanError(DivergentIntegralError):
    pass


class EnvelopeTooLooseError(PoissonConcError):
    """Rejection sampler accepted too small a fraction of proposals."""

    def __init__(self, acceptance_rate):
        self.acceptance_rate = acceptance_rate
        super().__init__(
            f"rejection acceptance rate {acceptance_rate:.3g} is below 1e-4; "
            "shrink the truncation window or use a tighter envelope"
        )


class ConvergenceError(PoissonConcError):
    def __init__(self, message, gap=None, iterations=None):
        self.gap = gap
        self.iterations = iterations
        super().__init__(message)


class PropertyViolationError(PoissonConcError, AssertionError):
    """A structural inequality failed; ``witness`` holds the serialized instance."""

    def __init__(self, message, witness=None):
        self.witness = witness
        super().__init__(message)


class DegenerateEventError(PoissonConcError):
    pass


class ConfigurationError(PoissonConcError):
    pass
