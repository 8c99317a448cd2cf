"""Exception types shared across the package."""


class NonFiniteFieldError(ValueError):
    """A field contains NaN or Inf."""


class SymmetryError(ValueError):
    """Spectral coefficients are not Hermitian."""


class PreconditionError(ValueError):
    """An input violates the documented precondition of an operation."""


class AccumulatorTimeError(ValueError):
    """Snapshots were supplied out of time order."""


class SolverError(RuntimeError):
    """A linear solve failed or produced an inconsistent result."""


class IncompatibleNeumannError(SolverError):
    """Neumann data violates the solvability condition of the mean mode."""

    def __init__(self, piece, defect):
        self.piece = piece
        self.defect = defect
        super().__init__(f"incompatible Neumann data for pressure piece {piece}: defect {defect:.3e}")


class DtUnderflowError(RuntimeError):
    """The adaptive step fell below dt_min, usually a sign of blow-up."""

    def __init__(self, dt, dt_min):
        self.dt = dt
        self.dt_min = dt_min
        super().__init__(f"time step {dt:.3e} below dt_min {dt_min:.3e}")


class DivergenceError(RuntimeError):
    """Velocity divergence exceeded the tolerance after a step."""


class ConfigError(ValueError):
    """Invalid scenario configuration."""


class CheckpointError(ValueError):
    """A checkpoint file could not be read."""


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass
