"""Source code for the stochastic Landau-Lifshitz-Gilbert simulator."""

__version__ = "0.1.0"

DEFAULT_THETA = 1.0
DEFAULT_SOLVER_TOL = 1e-10
DEFAULT_DECAY = 2.0
DIRECT_SOLVER_MAX_NODES = 4096
CSV_FLOAT_FORMAT = "%.17g"

# Tolerances on nodal invariants.
TOL_SPHERE = 1e-12
TOL_TANGENT = 1e-12
TOL_FRAME_INPUT = 1e-6
RENORMALIZATION_GUARD = 0.5


class SimulationError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(SimulationError):
    """Raise when a run configuration is invalid. Holds every violation found,
    not just the first one."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class MeshError(SimulationError):
    """Raise when a mesh cannot be built or a field does not fit a mesh."""


class NoiseError(SimulationError):
    """Raise when the noise operator cannot be represented on the mesh."""


class FrameError(SimulationError):
    """Raise when a magnetization is too far off the unit sphere to build
    tangent frames from."""


class SolverError(SimulationError):
    """Raise when the tangent linear system is not solved to tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=None,
                 min_sym_eig=None):
        self.residual = residual
        self.iterations = iterations
        self.min_sym_eig = min_sym_eig
        super().__init__(message)


class RenormalizationError(SimulationError):
    """Raise when m + v comes close enough to zero that projecting it back on
    the sphere is meaningless."""


class PathError(SimulationError):
    """Raise when a simulation path aborts. Records where it stopped."""

    def __init__(self, message, step, seed=None):
        self.step = step
        self.seed = seed
        super().__init__(message)


class StatisticalWarning(Warning):
    """Warn when a statistical check fails without being an error."""
