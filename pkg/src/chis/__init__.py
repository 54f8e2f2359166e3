"""Finite-volume solver and verification harness for a chemotaxis model
with indirect signal absorption.

The model couples a cell density u, a chemoattractant v, and an absorbing
agent w on a rectangular domain with no-flux boundaries:

    u_t = lap(u) - div(u grad v)
    v_t = lap(v) - v w
    w_t = -delta w + u          (delta > 0)

The package provides the spatial operators, an IMEX time stepper, trajectory
diagnostics (Lyapunov-type functionals, dissipation budgets, explicit norm
bounds), a check suite that verifies the discrete trajectories against those
bounds, and a CLI for running scenarios, sweeps, and refinement studies.
"""

from chis.errors import (
    AmplificationError,
    CflViolationError,
    ChisError,
    ConfigError,
    GridMismatchError,
    SnapshotFormatError,
    SolverConvergenceError,
)
from chis.grid import Field, GridSpec, integrate, linf_norm, lp_norm, mean
from chis.config import ScenarioConfig, load_config, load_config_file
from chis.runner import order_study, run_suite, scenario_run, sweep, verify_scenario

__version__ = "0.1.0"
