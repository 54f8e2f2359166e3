"""Exception types shared across the package."""


class ChisError(Exception):
    """Base class for all package-specific errors."""


class GridMismatchError(ChisError, ValueError):
    """Operands live on different grids."""


class ConfigError(ChisError, ValueError):
    """Scenario configuration is malformed; message carries a line anchor."""


class SolverConvergenceError(ChisError, RuntimeError):
    """Linear solve failed to reach the residual tolerance."""


class CflViolationError(ChisError, RuntimeError):
    """Requested time step exceeds the advective stability limit."""


class AmplificationError(ChisError, RuntimeError):
    """Solution amplitude grew past the runaway guard; run aborted."""


class SnapshotFormatError(ChisError, ValueError):
    """Snapshot file is corrupt or not in a recognized format."""
