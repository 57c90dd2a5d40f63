class ParameterError(ValueError):
    """Invalid model or experiment parameter."""


class ComparisonError(ValueError):
    """Configurations that cannot be compared (different domains or times)."""


class PreconditionError(ValueError):
    """Input does not meet an operation's precondition (e.g. trace coverage)."""


class RangeError(ValueError):
    """A requested window or interval lies outside what is available."""


class EstimationError(RuntimeError):
    """A Monte Carlo estimate cannot be formed."""


class KernelError(RuntimeError):
    """The event engine detected a corrupted state."""
