"""Exception hierarchy shared by all modules."""


class OqsimError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(OqsimError, ValueError):
    """Operator or state dimensions are inconsistent or exceed the cap."""


class ValidationError(OqsimError, ValueError):
    """A domain-type invariant is violated."""


class ImpossibleOutcomeError(OqsimError):
    """Conditioning on a measurement outcome of (numerically) zero probability."""


class DarkStateError(OqsimError):
    """A jump was requested from a state annihilated by the jump operator."""


class IntegrationError(OqsimError, RuntimeError):
    """The ODE integrator failed to reach the requested tolerance."""


class IntervalError(OqsimError, ValueError):
    """A time lies outside the interval on which a model is defined."""


class ConfigError(OqsimError):
    """A model file could not be parsed or failed validation."""
