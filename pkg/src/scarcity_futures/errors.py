"""Exception types raised across the engine."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class DegenerateLawError(DomainError):
    """A Gaussian law with zero variance was used where a density is needed."""


class CFLError(ValueError):
    """The explicit HJB scheme would be unstable with the requested time grid."""

    def __init__(self, message, required_nt):
        super().__init__(message)
        self.required_nt = int(required_nt)


class ConfigError(ValueError):
    """Invalid engine configuration."""
