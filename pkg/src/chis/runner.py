"""Scenario execution and the studies built on top of it: verification
suites over scenario sets, one-parameter sweeps, and grid/time refinement
studies.

Suite members and sweep points are independent jobs; they run on a thread
pool sized by the CHIS_THREADS environment variable (default: machine
parallelism), and any per-run files go into one directory per job.  Results
are aggregated after all jobs finish and sorted, so reruns of the same
configuration produce identical output byte for byte.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from chis.checks import (
    CheckReport,
    calibrate_monotonicity_slack,
    render_report_text,
    run_checks,
    suite_passed,
    write_report_csv,
)
from chis.config import (
    GeneratorSpec,
    ScenarioConfig,
    build_params,
    build_step_config,
    dump_config,
    load_config_file,
)
from chis.diagnostics import DiagnosticsConfig, Trajectory
from chis.errors import AmplificationError, ConfigError
from chis.fileio import emit_snapshot, emit_timeseries
from chis.stepper import run

__all__ = [
    "scenario_run",
    "verify_scenario",
    "run_suite",
    "SuiteResult",
    "sweep",
    "SweepRow",
    "render_sweep_table",
    "write_sweep_csv",
    "order_study",
    "OrderStudyResult",
    "render_order_table",
    "thread_count",
]

# calibration reruns cover at least the initial transient, where the
# per-step truncation defect of the monotone functionals peaks
_CALIBRATION_T_CAP = 2.0


def thread_count() -> int:
    """Worker cap: CHIS_THREADS if set, else the machine's parallelism."""
    raw = os.environ.get("CHIS_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise ConfigError(f"CHIS_THREADS must be an integer, got {raw!r}") from exc
        if n < 1:
            raise ConfigError(f"CHIS_THREADS must be positive, got {n}")
        return n
    return os.cpu_count() or 1


def _diagnostics_config(cfg: ScenarioConfig) -> DiagnosticsConfig:
    return DiagnosticsConfig(p_sublinear=cfg.p_sublinear)


def scenario_run(
    cfg: ScenarioConfig, *, out_dir: Optional[Union[str, Path]] = None
) -> Trajectory:
    """Integrate one scenario to its horizon; optionally write run outputs."""
    params = build_params(cfg)
    traj = run(
        params,
        build_step_config(cfg),
        cfg.T_final,
        diagnostics=_diagnostics_config(cfg),
        diagnostic_stride=cfg.diagnostic_stride,
        snapshot_stride=cfg.snapshot_stride,
        transport=cfg.transport,
        absorption=cfg.absorption,
    )
    if out_dir is not None:
        _write_run_outputs(traj, cfg, Path(out_dir))
    return traj


def _write_run_outputs(traj: Trajectory, cfg: ScenarioConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.toml").write_text(dump_config(cfg))
    emit_timeseries(traj, out / "timeseries.csv")
    emit_snapshot(traj.final_state, out / "final.bin")


def verify_scenario(
    cfg: ScenarioConfig, *, out_dir: Optional[Union[str, Path]] = None
) -> tuple[list[CheckReport], Trajectory]:
    """Run a scenario and its configured checks.

    When the scenario asks for calibration, a dt-halved companion run over
    the initial transient fixes the quadratic slack coefficients of the two
    monotonicity checks before the main trajectory is judged.
    """
    traj = scenario_run(cfg, out_dir=out_dir)
    c_lyap = c_subl = 0.0
    monotone_checks = {"lyapunov_small_v0", "sublinear_functional"}
    if cfg.calibrate and monotone_checks & set(cfg.checks_run):
        cal_T = cfg.calibration_T
        if cal_T is None:
            cal_T = min(cfg.T_final, _CALIBRATION_T_CAP)
        half = replace(
            cfg,
            dt=0.5 * cfg.dt,
            T_final=cal_T,
            snapshot_stride=0,
            diagnostic_stride=0,
            name=cfg.name + "-calibration",
        )
        traj_half = scenario_run(half)
        c_lyap = calibrate_monotonicity_slack(traj_half, cfg.dt, "lyapunov")
        c_subl = calibrate_monotonicity_slack(traj_half, cfg.dt, "sublinear")
    reports = run_checks(
        traj,
        scenario=cfg.name,
        checks=cfg.checks_run,
        expected_fail=cfg.expected_fail,
        tol_overrides=cfg.tol_overrides,
        c_lyapunov=c_lyap,
        c_sublinear=c_subl,
        equilibrium_targets=cfg.equilibrium_targets,
    )
    if out_dir is not None:
        out = Path(out_dir)
        (out / "checks.txt").write_text(render_report_text(reports))
        write_report_csv(reports, out / "checks.csv")
    return reports, traj


@dataclass
class SuiteResult:
    """Aggregated outcome of a scenario suite."""

    reports: list = field(default_factory=list)
    load_errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.load_errors and suite_passed(self.reports)


def run_suite(
    scenarios: Sequence[Union[ScenarioConfig, str, Path]],
    *,
    out_dir: Optional[Union[str, Path]] = None,
    max_workers: Optional[int] = None,
) -> SuiteResult:
    """Verify every scenario; load failures are reported, not fatal.

    Entries may be configs or paths to scenario files.  Jobs run
    concurrently; the aggregated reports come back sorted by (check id,
    scenario name), and the suite is OK iff nothing failed to load and every
    applicable check matched its expectation.
    """
    result = SuiteResult()
    configs: list[ScenarioConfig] = []
    for entry in scenarios:
        if isinstance(entry, ScenarioConfig):
            configs.append(entry)
            continue
        try:
            configs.append(load_config_file(entry))
        except ConfigError as exc:
            result.load_errors.append(str(exc))
    if not configs:
        return result

    def job(cfg: ScenarioConfig) -> list[CheckReport]:
        sub = None if out_dir is None else Path(out_dir) / cfg.name
        return verify_scenario(cfg, out_dir=sub)[0]

    workers = max_workers or thread_count()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for reports in pool.map(job, configs):
            result.reports.extend(reports)
    result.reports.sort(key=lambda r: (r.check_id, r.context.get("scenario", "")))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "suite.txt").write_text(render_report_text(result.reports))
        write_report_csv(result.reports, out / "suite.csv")
    return result


# ---------------------------------------------------------------------------
# parameter sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    """Per-value outcome of a one-parameter sweep."""

    param: str
    value: float
    dist_u: float
    dist_v: float
    dist_w: float
    amplified: bool
    lyapunov_monotone: bool


def _apply_param(cfg: ScenarioConfig, param: str, value: float) -> ScenarioConfig:
    name = f"{cfg.name}-{param}={value:g}"
    if param == "v0max":
        if value < 0:
            raise ConfigError(f"v0max must be nonnegative, got {value}")
        gen = GeneratorSpec(
            "cosine_mode",
            {"k": 1, "amplitude": value / 2.0, "baseline": value / 2.0},
        )
        return replace(cfg, initial_v=gen, name=name)
    if param == "delta":
        return replace(cfg, delta=float(value), name=name)
    if param == "dt":
        return replace(cfg, dt=float(value), name=name)
    if param == "nx":
        nx = int(value)
        ny = None if cfg.dim == 1 else nx
        return replace(cfg, nx=nx, ny=ny, name=name)
    if param == "T_final":
        return replace(cfg, T_final=float(value), name=name)
    raise ConfigError(
        f"unknown sweep parameter {param!r}; supported: "
        "v0max, delta, dt, nx, T_final"
    )


def sweep(
    cfg: ScenarioConfig,
    param: str,
    values: Sequence[float],
    *,
    out_dir: Optional[Union[str, Path]] = None,
    max_workers: Optional[int] = None,
) -> list[SweepRow]:
    """Rerun one scenario across parameter values and tabulate outcomes.

    Each row records the final distances to the flat state, whether the
    blow-up guard tripped, and whether the weighted p-energy stayed
    monotone within its per-step relative slack.  Rows are observational;
    failures of the monotonicity flag are data, not errors.
    """
    if not values:
        raise ConfigError("sweep needs at least one value")
    jobs = [(float(v), _apply_param(cfg, param, v)) for v in values]

    def one(job: tuple[float, ScenarioConfig]) -> SweepRow:
        value, job_cfg = job
        sub = None if out_dir is None else Path(out_dir) / job_cfg.name
        try:
            traj = scenario_run(job_cfg, out_dir=sub)
        except AmplificationError:
            return SweepRow(
                param=param,
                value=value,
                dist_u=math.nan,
                dist_v=math.nan,
                dist_w=math.nan,
                amplified=True,
                lyapunov_monotone=False,
            )
        rec = traj.final_record
        return SweepRow(
            param=param,
            value=value,
            dist_u=rec.dist_u,
            dist_v=rec.dist_v,
            dist_w=rec.dist_w,
            amplified=False,
            lyapunov_monotone=traj.lyap_step_viol_max <= 0.0,
        )

    workers = max_workers or thread_count()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(one, jobs))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(rows, out / "sweep.csv")
    return rows


_SWEEP_COLUMNS = (
    "param", "value", "dist_u", "dist_v", "dist_w", "amplified",
    "lyapunov_monotone",
)


def write_sweep_csv(rows: Sequence[SweepRow], path: Union[str, Path]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SWEEP_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.param,
                    format(r.value, ".17g"),
                    format(r.dist_u, ".17g"),
                    format(r.dist_v, ".17g"),
                    format(r.dist_w, ".17g"),
                    "true" if r.amplified else "false",
                    "true" if r.lyapunov_monotone else "false",
                ]
            )


def render_sweep_table(rows: Sequence[SweepRow]) -> str:
    lines = [
        f"{'value':>12}  {'dist_u':>12}  {'dist_v':>12}  {'dist_w':>12}  "
        f"{'amplified':>9}  monotone"
    ]
    for r in rows:
        lines.append(
            f"{r.value:>12.6g}  {r.dist_u:>12.4e}  {r.dist_v:>12.4e}  "
            f"{r.dist_w:>12.4e}  {str(r.amplified).lower():>9}  "
            f"{str(r.lyapunov_monotone).lower()}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# refinement studies
# ---------------------------------------------------------------------------


@dataclass
class OrderStudyResult:
    """Errors against the finest level and the orders they imply.

    ``errors[f]`` has one entry per non-reference level.  ``raw_orders`` are
    log2 ratios of successive errors; they overshoot the scheme order
    because every error contains the same reference-level term.
    ``richardson_orders`` are log2 ratios of successive error differences,
    which cancel that shared term.  ``monotone`` flags cleanly decreasing
    error sequences.
    """

    axis: str
    levels: list
    errors: dict
    raw_orders: dict
    richardson_orders: dict
    monotone: dict

    @property
    def fields(self) -> tuple:
        return tuple(self.errors)


def _restrict(values: np.ndarray, factor: int) -> np.ndarray:
    """Cell-average a fine array down by an integer factor per axis."""
    if values.ndim == 1:
        return values.reshape(-1, factor).mean(axis=1)
    nx, ny = values.shape
    return (
        values.reshape(nx // factor, factor, ny // factor, factor)
        .mean(axis=(1, 3))
    )


def order_study(
    cfg: ScenarioConfig,
    axis: str,
    levels: int,
    *,
    max_workers: Optional[int] = None,
) -> OrderStudyResult:
    """Self-convergence of the final state under grid or step refinement.

    Runs ``levels`` copies of the scenario, doubling resolution along the
    chosen axis each time.  The finest level is the reference: coarser
    solutions are compared against it (fine fields are cell-averaged down
    for the space axis) in the discrete L2 norm at the final time.
    """
    if axis not in ("space", "time"):
        raise ConfigError(f"axis must be 'space' or 'time', got {axis!r}")
    if levels < 3:
        raise ConfigError(f"need at least 3 levels, got {levels}")

    if axis == "space":
        log_values = [cfg.nx * 2**i for i in range(levels)]
        jobs = [
            replace(
                cfg,
                nx=n,
                ny=None if cfg.dim == 1 else n,
                name=f"{cfg.name}-nx={n}",
                snapshot_stride=0,
                diagnostic_stride=0,
            )
            for n in log_values
        ]
    else:
        log_values = [cfg.dt / 2**i for i in range(levels)]
        jobs = [
            replace(
                cfg,
                dt=dt,
                name=f"{cfg.name}-dt={dt:g}",
                snapshot_stride=0,
                diagnostic_stride=0,
            )
            for dt in log_values
        ]

    workers = max_workers or thread_count()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        trajs = list(pool.map(scenario_run, jobs))

    ref = trajs[-1].final_state
    errors: dict[str, list] = {"u": [], "v": [], "w": []}
    for lvl, traj in enumerate(trajs[:-1]):
        state = traj.final_state
        meas = state.u.grid.h ** state.u.grid.dim
        for name in ("u", "v", "w"):
            coarse = getattr(state, name).values
            fine = getattr(ref, name).values
            if axis == "space":
                factor = 2 ** (levels - 1 - lvl)
                fine = _restrict(fine, factor)
            diff = coarse - fine
            errors[name].append(float(np.sqrt((diff * diff).sum() * meas)))

    raw_orders: dict[str, list] = {}
    richardson_orders: dict[str, list] = {}
    monotone: dict[str, bool] = {}
    for name, errs in errors.items():
        e = np.asarray(errs)
        # a field reproduced exactly at every level has nothing to converge
        monotone[name] = bool(np.all(e == 0.0) or np.all(np.diff(e) < 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            raw_orders[name] = [
                float(x) for x in np.log2(e[:-1] / e[1:])
            ]
            d = e[:-1] - e[1:]
            richardson_orders[name] = [
                float(x) for x in np.log2(d[:-1] / d[1:])
            ]
    return OrderStudyResult(
        axis=axis,
        levels=log_values,
        errors=errors,
        raw_orders=raw_orders,
        richardson_orders=richardson_orders,
        monotone=monotone,
    )


def render_order_table(result: OrderStudyResult) -> str:
    head = "nx" if result.axis == "space" else "dt"
    lines = [f"refinement axis: {result.axis} (reference = finest level)"]
    for name in result.fields:
        lines.append(f"field {name}:")
        errs = result.errors[name]
        for lvl, err in zip(result.levels[:-1], errs):
            lines.append(f"  {head}={lvl:<12g} error={err:.6e}")
        raw = ", ".join(f"{x:.3f}" for x in result.raw_orders[name])
        ric = ", ".join(f"{x:.3f}" for x in result.richardson_orders[name])
        lines.append(f"  raw orders:        [{raw}]")
        lines.append(f"  richardson orders: [{ric}]")
        if not result.monotone[name]:
            lines.append("  warning: error sequence is not monotone")
    return "\n".join(lines) + "\n"
