"""Exception types raised across the package."""


class OpenMarketError(ValueError):
    """Base class for invalid inputs and failed preconditions."""


class SimulationError(OpenMarketError):
    """A simulated step produced a non-finite value."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class BlowThroughError(OpenMarketError):
    """A portfolio return at or below -1 wiped out the wealth process."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(OpenMarketError):
    """Invalid experiment configuration (field-level message)."""
