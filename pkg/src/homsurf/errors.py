"""Exception hierarchy; the CLI maps these onto exit codes."""


class HomsurfError(Exception):
    """Base class for all package errors."""


class ConfigError(HomsurfError, ValueError):
    """Invalid scenario, sweep or run configuration."""


class NumericalError(HomsurfError, RuntimeError):
    """A numerical stage failed (solver breakdown, degeneracy, ...)."""


class ImmersionDegeneracyError(NumericalError):
    pass


class ChartError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class SolverError(NumericalError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class AssemblyError(NumericalError):
    pass


class EmbeddabilityError(NumericalError):
    def __init__(self, message, t=None, value=None):
        super().__init__(message)
        self.t = t
        self.value = value


class MeshResolutionError(ConfigError):
    """The mesh does not resolve the oscillation length scale."""
