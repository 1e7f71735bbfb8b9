"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    pass


class DegenerateInputError(ValueError):
    """Input sits on a measure-zero configuration (e.g. a point on a trace)."""


class DomainError(ValueError):
    pass


class NoBridgeError(ValueError):
    pass


class RejectedConfigurationError(ValueError):
    """Annulus radii graze the raster, or the geometry is otherwise unusable."""


class ConfigError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    """Internal numerical consistency check failed beyond tolerance."""


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
