"""Command line front end.

Subcommands:

- ``chis run <config>``: integrate one scenario and write its outputs.
- ``chis verify <config|dir> ...``: run scenarios with their checks; a
  directory expands to every ``*.toml`` inside it.
- ``chis sweep <config> --param NAME --values a,b,c``: rerun a scenario
  across parameter values and tabulate the outcomes.
- ``chis order-study <config> --refine space|time --levels K``: refinement
  study of the final state.
- ``chis defaults``: print the built-in scenario as a config file.

Exit status: 0 on success, 1 when a check or guard failed, 2 on bad usage
or unreadable configuration.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from chis.checks import render_report_text, suite_passed
from chis.config import ScenarioConfig, dump_config, load_config_file
from chis.errors import AmplificationError, ChisError, ConfigError
from chis.runner import (
    order_study,
    render_order_table,
    render_sweep_table,
    run_suite,
    scenario_run,
    sweep,
    verify_scenario,
)

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chis",
        description="chemotaxis system with indirect signal consumption",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a scenario")
    p_run.add_argument("config", help="scenario file (TOML)")
    p_run.add_argument("--out", default=None, help="output directory")

    p_verify = sub.add_parser("verify", help="run scenarios with checks")
    p_verify.add_argument(
        "targets", nargs="+", help="scenario files or directories of them"
    )
    p_verify.add_argument("--out", default=None, help="output directory")

    p_sweep = sub.add_parser("sweep", help="rerun across parameter values")
    p_sweep.add_argument("config", help="scenario file (TOML)")
    p_sweep.add_argument("--param", required=True, help="parameter to vary")
    p_sweep.add_argument(
        "--values", required=True, help="comma-separated numeric values"
    )
    p_sweep.add_argument("--out", default=None, help="output directory")

    p_order = sub.add_parser(
        "order-study", help="refinement study of the final state"
    )
    p_order.add_argument("config", help="scenario file (TOML)")
    p_order.add_argument(
        "--refine", required=True, choices=("space", "time"),
        help="refinement axis",
    )
    p_order.add_argument(
        "--levels", type=int, default=4, help="number of refinement levels"
    )

    sub.add_parser("defaults", help="print the built-in scenario")
    return parser


def _load(path: str) -> ScenarioConfig:
    return load_config_file(path)


def _expand_targets(targets: Sequence[str]) -> list[Path]:
    paths: list[Path] = []
    for target in targets:
        p = Path(target)
        if p.is_dir():
            found = sorted(p.glob("*.toml"))
            if not found:
                raise ConfigError(f"no scenario files in directory {target}")
            paths.extend(found)
        else:
            paths.append(p)
    return paths


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    out = args.out if args.out is not None else f"chis_out/{cfg.name}"
    try:
        traj = scenario_run(cfg, out_dir=out)
    except AmplificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rec = traj.final_record
    print(
        f"{cfg.name}: {traj.step_count} steps to T={traj.T:g}, "
        f"mass drift {traj.mass_drift_max:.3e}, "
        f"dist (u,v,w) = ({rec.dist_u:.3e}, {rec.dist_v:.3e}, "
        f"{rec.dist_w:.3e})"
    )
    print(f"outputs in {out}")
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    paths = _expand_targets(args.targets)
    if len(paths) == 1 and args.out is None:
        # single scenario: keep the output inline and skip the suite dir
        cfg = _load(str(paths[0]))
        reports, _ = verify_scenario(cfg)
        print(render_report_text(reports), end="")
        return 0 if suite_passed(reports) else 1
    result = run_suite(paths, out_dir=args.out)
    for err in result.load_errors:
        print(f"error: {err}", file=sys.stderr)
    print(render_report_text(result.reports), end="")
    if result.load_errors:
        return 2
    return 0 if result.ok else 1


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --values list {args.values!r}") from exc
    if not values:
        raise ConfigError("--values is empty")
    rows = sweep(cfg, args.param, values, out_dir=args.out)
    print(render_sweep_table(rows), end="")
    return 0


def _cmd_order_study(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    result = order_study(cfg, args.refine, args.levels)
    print(render_order_table(result), end="")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "order-study":
            return _cmd_order_study(args)
        if args.command == "defaults":
            print(dump_config(ScenarioConfig()), end="")
            return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ChisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
