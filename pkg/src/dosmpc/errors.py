"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Matrix or sequence dimensions are mutually inconsistent."""


class StructureError(ValueError):
    """A structural assumption (stabilizability, observability) fails."""


class SynthesisError(RuntimeError):
    """Gain synthesis did not meet its verified contract."""


class PersistencyError(RuntimeError):
    """Collected data could not be certified persistently exciting."""


class ResilienceError(ValueError):
    """Attack parameters violate the maximum-resilience condition."""


class SolverError(RuntimeError):
    """The QP solver returned a non-optimal status."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""
