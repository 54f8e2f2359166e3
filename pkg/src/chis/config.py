"""Scenario configuration: strict TOML loading, canonical dumping, and
initial-data generation.

A scenario file has sections [domain], [model], [initial], [numerics], and
[checks]; every key is optional and defaults to the reference scenario (unit
interval, 256 cells, unit decay rate, cosine bumps, horizon 50).  Loading is
strict: unknown sections or keys, malformed generator descriptors, and
out-of-range values are rejected with the offending line number where the
source text contains the key.

Initial data comes from small generator descriptors (inline tables with a
``kind`` key).  Generated fields must be admissible: nonnegative everywhere,
and the density must carry positive mass.  Rounding-level negative dips are
clamped to zero; genuinely negative data is a configuration error.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from chis.checks import CHECK_IDS
from chis.errors import ConfigError
from chis.fileio import load_field
from chis.grid import Field, GridSpec, integrate
from chis.operators import ADVECTION_SCHEMES
from chis.stepper import (
    ABSORPTION_MODES,
    TRANSPORT_MODES,
    ModelParams,
    StepConfig,
)

__all__ = [
    "GeneratorSpec",
    "ScenarioConfig",
    "load_config",
    "load_config_file",
    "dump_config",
    "default_config",
    "generate_field",
    "build_grid",
    "build_params",
    "build_step_config",
]

_GENERATOR_PARAMS = {
    "constant": {"c"},
    "gaussian": {"center", "width", "amplitude", "baseline"},
    "cosine_mode": {"k", "amplitude", "baseline"},
    "from_file": {"path"},
}

# negative dips smaller than this (relative to the field scale) are treated
# as rounding and clamped to zero
_CLAMP_RTOL = 1e-12


class _KeyedConfigError(ConfigError):
    """ConfigError that remembers which key failed, for line anchoring."""

    def __init__(self, key: str, msg: str) -> None:
        super().__init__(msg)
        self.key = key


@dataclass
class GeneratorSpec:
    """One initial-data descriptor: a kind plus its parameters."""

    kind: str
    params: dict

    def __post_init__(self) -> None:
        if self.kind not in _GENERATOR_PARAMS:
            raise ConfigError(
                f"unknown generator kind {self.kind!r}, expected one of "
                f"{sorted(_GENERATOR_PARAMS)}"
            )
        want = _GENERATOR_PARAMS[self.kind]
        got = set(self.params)
        if got != want:
            raise ConfigError(
                f"generator {self.kind!r} takes parameters {sorted(want)}, "
                f"got {sorted(got)}"
            )


def _cosine(k: int, amplitude: float, baseline: float) -> GeneratorSpec:
    return GeneratorSpec(
        "cosine_mode", {"k": k, "amplitude": amplitude, "baseline": baseline}
    )


@dataclass
class ScenarioConfig:
    """A fully resolved scenario; constructing one validates it."""

    name: str = "default"
    # domain
    dim: int = 1
    extents: tuple = (1.0,)
    nx: int = 256
    ny: Optional[int] = None
    # model
    delta: float = 1.0
    # initial data: density 1 + 0.5 cos(pi x), signal a (1 + cos(pi x))/2
    # with a = 1/6 (the decay threshold in one and two dimensions), absorber 0.1
    initial_u: GeneratorSpec = field(
        default_factory=lambda: _cosine(1, 0.5, 1.0)
    )
    initial_v: GeneratorSpec = field(
        default_factory=lambda: _cosine(1, 1.0 / 12.0, 1.0 / 12.0)
    )
    initial_w: GeneratorSpec = field(
        default_factory=lambda: GeneratorSpec("constant", {"c": 0.1})
    )
    # numerics
    T_final: float = 50.0
    dt: float = 2e-4
    cfl_safety: float = 0.9
    advection_scheme: str = "central"
    linear_tol: float = 1e-12
    transport: str = "conservative"
    absorption: str = "semi-implicit"
    snapshot_stride: int = 0
    diagnostic_stride: int = 100
    # checks
    checks_run: tuple = CHECK_IDS
    expected_fail: tuple = ()
    tol_overrides: dict = field(default_factory=dict)
    p_sublinear: Optional[float] = None
    calibrate: bool = True
    calibration_T: Optional[float] = None
    equilibrium_targets: Optional[tuple] = (1e-3, 1e-4, 1e-3)

    def __post_init__(self) -> None:
        _validate(self)

    @property
    def cells(self) -> tuple:
        return (self.nx,) if self.dim == 1 else (self.nx, self.ny)


def default_config() -> ScenarioConfig:
    """The reference scenario; every load starts from these values."""
    return ScenarioConfig()


def _validate(cfg: ScenarioConfig) -> None:
    def fail(key: str, msg: str) -> None:
        raise _KeyedConfigError(key, msg)

    if not cfg.name or not isinstance(cfg.name, str):
        fail("name", "name must be a nonempty string")
    if cfg.dim not in (1, 2):
        fail("dim", f"dim must be 1 or 2, got {cfg.dim}")
    if len(cfg.extents) != cfg.dim:
        fail(
            "extents",
            f"extents needs {cfg.dim} entries for dim={cfg.dim}, "
            f"got {len(cfg.extents)}",
        )
    if any(not (x > 0 and math.isfinite(x)) for x in cfg.extents):
        fail("extents", f"extents must be positive, got {cfg.extents}")
    if cfg.nx < 2:
        fail("nx", f"nx must be at least 2, got {cfg.nx}")
    if cfg.dim == 1:
        if cfg.ny is not None:
            fail("ny", "ny is only meaningful for dim = 2")
    else:
        if cfg.ny is None or cfg.ny < 2:
            fail("ny", f"dim = 2 needs ny >= 2, got {cfg.ny}")
        hx = cfg.extents[0] / cfg.nx
        hy = cfg.extents[1] / cfg.ny
        if abs(hx - hy) > 1e-12 * hx:
            fail("ny", f"cells must be square: hx={hx} vs hy={hy}")
    if not (cfg.delta > 0 and math.isfinite(cfg.delta)):
        fail("delta", f"delta must be positive, got {cfg.delta}")
    if not (cfg.T_final > 0 and math.isfinite(cfg.T_final)):
        fail("T_final", f"T_final must be positive, got {cfg.T_final}")
    if not (cfg.dt > 0 and math.isfinite(cfg.dt)):
        fail("dt", f"dt must be positive, got {cfg.dt}")
    if not 0.0 < cfg.cfl_safety <= 1.0:
        fail("cfl_safety", f"cfl_safety must lie in (0, 1], got {cfg.cfl_safety}")
    if cfg.advection_scheme not in ADVECTION_SCHEMES:
        fail(
            "advection_scheme",
            f"advection_scheme must be one of {ADVECTION_SCHEMES}, "
            f"got {cfg.advection_scheme!r}",
        )
    if not 0.0 < cfg.linear_tol <= 1e-10:
        fail(
            "linear_tol",
            f"linear_tol must lie in (0, 1e-10], got {cfg.linear_tol}",
        )
    if cfg.transport not in TRANSPORT_MODES:
        fail(
            "transport",
            f"transport must be one of {TRANSPORT_MODES}, got {cfg.transport!r}",
        )
    if cfg.absorption not in ABSORPTION_MODES:
        fail(
            "absorption",
            f"absorption must be one of {ABSORPTION_MODES}, "
            f"got {cfg.absorption!r}",
        )
    if cfg.snapshot_stride < 0:
        fail("snapshot_stride", "snapshot_stride must be nonnegative")
    if cfg.diagnostic_stride < 0:
        fail("diagnostic_stride", "diagnostic_stride must be nonnegative")
    for cid in (*cfg.checks_run, *cfg.expected_fail, *cfg.tol_overrides):
        if cid not in CHECK_IDS:
            fail("run", f"unknown check id {cid!r}")
    for cid, tol in cfg.tol_overrides.items():
        if not (math.isfinite(tol) and tol >= 0):
            fail(f"tol_{cid}", f"tolerance override for {cid} must be >= 0")
    if cfg.p_sublinear is not None and not 0.0 < cfg.p_sublinear < 1.0:
        fail(
            "p_sublinear",
            f"p_sublinear must lie in (0, 1), got {cfg.p_sublinear}",
        )
    if cfg.calibration_T is not None and cfg.calibration_T <= 0:
        fail("calibration_T", "calibration_T must be positive")
    if cfg.equilibrium_targets is not None:
        tg = cfg.equilibrium_targets
        if len(tg) != 3 or any(not (x > 0 and math.isfinite(x)) for x in tg):
            fail(
                "equilibrium_targets",
                "equilibrium_targets must be three positive numbers "
                "(density, signal, absorber)",
            )


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

_SECTION_KEYS = {
    "domain": {"dim", "extents", "nx", "ny"},
    "model": {"delta"},
    "initial": {"u", "v", "w"},
    "numerics": {
        "T_final", "dt", "cfl_safety", "advection_scheme", "linear_tol",
        "transport", "absorption", "snapshot_stride", "diagnostic_stride",
    },
    "checks": {
        "run", "expected_fail", "p_sublinear", "calibrate", "calibration_T",
        "equilibrium_targets",
    },
}


def _line_of(text: str, key: str) -> str:
    """Prefix 'line N: ' when the key is visible in the source text."""
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=", re.MULTILINE)
    m = pattern.search(text)
    if m is None:
        return ""
    return f"line {text.count(chr(10), 0, m.start()) + 1}: "


def _take_number(raw: dict, key: str, where) -> Optional[float]:
    if key not in raw:
        return None
    val = raw.pop(key)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(where(key) + f"{key} must be a number, got {val!r}")
    return float(val)


def _take_int(raw: dict, key: str, where) -> Optional[int]:
    if key not in raw:
        return None
    val = raw.pop(key)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(where(key) + f"{key} must be an integer, got {val!r}")
    return val


def _take_str(raw: dict, key: str, where) -> Optional[str]:
    if key not in raw:
        return None
    val = raw.pop(key)
    if not isinstance(val, str):
        raise ConfigError(where(key) + f"{key} must be a string, got {val!r}")
    return val


def _take_str_list(raw: dict, key: str, where) -> Optional[tuple]:
    if key not in raw:
        return None
    val = raw.pop(key)
    if not isinstance(val, list) or any(not isinstance(x, str) for x in val):
        raise ConfigError(
            where(key) + f"{key} must be an array of strings, got {val!r}"
        )
    return tuple(val)


def _generator_from_table(name: str, val, where) -> GeneratorSpec:
    if not isinstance(val, dict) or "kind" not in val:
        raise ConfigError(
            where(name)
            + f"initial {name} must be a table with a 'kind' key, got {val!r}"
        )
    params = dict(val)
    kind = params.pop("kind")
    try:
        return GeneratorSpec(kind, params)
    except ConfigError as exc:
        raise ConfigError(where(name) + str(exc)) from exc


def load_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document; defaults fill absent keys.

    Raises:
        ConfigError: syntax errors, unknown sections/keys, type mismatches,
            or constraint violations, with a line anchor where available.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc

    def where(key: str):
        return _line_of(text, key)

    cfg = default_config()
    kw: dict = {}

    name = doc.pop("name", None)
    if name is not None:
        if not isinstance(name, str):
            raise ConfigError(where("name") + f"name must be a string, got {name!r}")
        kw["name"] = name
    for section in doc:
        if section not in _SECTION_KEYS:
            raise ConfigError(
                f"unknown section [{section}], expected one of "
                f"{sorted(_SECTION_KEYS)}"
            )

    dom = dict(doc.get("domain", {}))
    if (v := _take_int(dom, "dim", where)) is not None:
        kw["dim"] = v
    if "extents" in dom:
        val = dom.pop("extents")
        if not isinstance(val, list) or any(
            isinstance(x, bool) or not isinstance(x, (int, float)) for x in val
        ):
            raise ConfigError(
                where("extents") + f"extents must be an array of numbers, got {val!r}"
            )
        kw["extents"] = tuple(float(x) for x in val)
    if (v := _take_int(dom, "nx", where)) is not None:
        kw["nx"] = v
    if (v := _take_int(dom, "ny", where)) is not None:
        kw["ny"] = v

    mod = dict(doc.get("model", {}))
    if (v := _take_number(mod, "delta", where)) is not None:
        kw["delta"] = v

    ini = dict(doc.get("initial", {}))
    for name_, attr in (("u", "initial_u"), ("v", "initial_v"), ("w", "initial_w")):
        if name_ in ini:
            kw[attr] = _generator_from_table(name_, ini.pop(name_), where)

    num = dict(doc.get("numerics", {}))
    for key, attr, taker in (
        ("T_final", "T_final", _take_number),
        ("dt", "dt", _take_number),
        ("cfl_safety", "cfl_safety", _take_number),
        ("linear_tol", "linear_tol", _take_number),
        ("advection_scheme", "advection_scheme", _take_str),
        ("transport", "transport", _take_str),
        ("absorption", "absorption", _take_str),
        ("snapshot_stride", "snapshot_stride", _take_int),
        ("diagnostic_stride", "diagnostic_stride", _take_int),
    ):
        if (v := taker(num, key, where)) is not None:
            kw[attr] = v

    chk = dict(doc.get("checks", {}))
    if (v := _take_str_list(chk, "run", where)) is not None:
        kw["checks_run"] = v
    if (v := _take_str_list(chk, "expected_fail", where)) is not None:
        kw["expected_fail"] = v
    if (v := _take_number(chk, "p_sublinear", where)) is not None:
        kw["p_sublinear"] = v
    if "calibrate" in chk:
        val = chk.pop("calibrate")
        if not isinstance(val, bool):
            raise ConfigError(
                where("calibrate") + f"calibrate must be a boolean, got {val!r}"
            )
        kw["calibrate"] = val
    if (v := _take_number(chk, "calibration_T", where)) is not None:
        kw["calibration_T"] = v
    if "equilibrium_targets" in chk:
        val = chk.pop("equilibrium_targets")
        if not isinstance(val, list):
            raise ConfigError(
                where("equilibrium_targets")
                + f"equilibrium_targets must be an array, got {val!r}"
            )
        kw["equilibrium_targets"] = tuple(float(x) for x in val)
    overrides = {}
    for key in list(chk):
        if key.startswith("tol_"):
            overrides[key[4:]] = _take_number(chk, key, where)
    if overrides:
        kw["tol_overrides"] = overrides

    for section, leftover in (
        ("domain", dom), ("model", mod), ("initial", ini),
        ("numerics", num), ("checks", chk),
    ):
        for key in leftover:
            raise ConfigError(
                where(key) + f"unknown key {key!r} in section [{section}]"
            )

    try:
        return replace(cfg, **kw)
    except _KeyedConfigError as exc:
        # constraint violations from construction, re-anchored to the source
        raise ConfigError(where(exc.key) + str(exc)) from exc


def load_config_file(path: Union[str, Path]) -> ScenarioConfig:
    """load_config over a file, naming the file in errors."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return load_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# dumping
# ---------------------------------------------------------------------------


def _toml_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, int):
        return str(val)
    if isinstance(val, float):
        text = repr(val)  # shortest digits that round-trip exactly
        return text if any(c in text for c in ".einf") else text + ".0"
    if isinstance(val, str):
        return '"' + val.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(val, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in val) + "]"
    raise TypeError(f"cannot serialize {val!r}")


def _toml_generator(spec: GeneratorSpec) -> str:
    items = [f'kind = "{spec.kind}"']
    items.extend(
        f"{k} = {_toml_value(v)}" for k, v in sorted(spec.params.items())
    )
    return "{ " + ", ".join(items) + " }"


def dump_config(cfg: ScenarioConfig) -> str:
    """Canonical TOML for a scenario; load_config(dump_config(c)) == c."""
    lines = [f"name = {_toml_value(cfg.name)}", ""]
    lines += ["[domain]", f"dim = {cfg.dim}", f"extents = {_toml_value(cfg.extents)}",
              f"nx = {cfg.nx}"]
    if cfg.ny is not None:
        lines.append(f"ny = {cfg.ny}")
    lines += ["", "[model]", f"delta = {_toml_value(cfg.delta)}"]
    lines += ["", "[initial]"]
    lines += [
        f"u = {_toml_generator(cfg.initial_u)}",
        f"v = {_toml_generator(cfg.initial_v)}",
        f"w = {_toml_generator(cfg.initial_w)}",
    ]
    lines += [
        "",
        "[numerics]",
        f"T_final = {_toml_value(cfg.T_final)}",
        f"dt = {_toml_value(cfg.dt)}",
        f"cfl_safety = {_toml_value(cfg.cfl_safety)}",
        f"advection_scheme = {_toml_value(cfg.advection_scheme)}",
        f"linear_tol = {_toml_value(cfg.linear_tol)}",
        f"transport = {_toml_value(cfg.transport)}",
        f"absorption = {_toml_value(cfg.absorption)}",
        f"snapshot_stride = {cfg.snapshot_stride}",
        f"diagnostic_stride = {cfg.diagnostic_stride}",
    ]
    lines += [
        "",
        "[checks]",
        f"run = {_toml_value(cfg.checks_run)}",
        f"expected_fail = {_toml_value(cfg.expected_fail)}",
        f"calibrate = {_toml_value(cfg.calibrate)}",
    ]
    if cfg.p_sublinear is not None:
        lines.append(f"p_sublinear = {_toml_value(cfg.p_sublinear)}")
    if cfg.calibration_T is not None:
        lines.append(f"calibration_T = {_toml_value(cfg.calibration_T)}")
    if cfg.equilibrium_targets is not None:
        lines.append(
            f"equilibrium_targets = {_toml_value(cfg.equilibrium_targets)}"
        )
    for cid in sorted(cfg.tol_overrides):
        lines.append(f"tol_{cid} = {_toml_value(cfg.tol_overrides[cid])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# materialization
# ---------------------------------------------------------------------------


def build_grid(cfg: ScenarioConfig) -> GridSpec:
    return GridSpec(dim=cfg.dim, extent=cfg.extents, cells=cfg.cells)


def generate_field(
    spec: GeneratorSpec, grid: GridSpec, *, nonneg: bool = True
) -> Field:
    """Evaluate one generator on a grid.

    Raises:
        ConfigError: negative data beyond rounding (when nonneg), a
            from_file grid that disagrees with the scenario grid, or an
            unreadable file.
    """
    p = spec.params
    if spec.kind == "constant":
        values = np.full(grid.shape, float(p["c"]))
    elif spec.kind == "cosine_mode":
        k = int(p["k"])
        if k < 0:
            raise ConfigError(f"cosine_mode k must be nonnegative, got {k}")
        axes = grid.cell_centers()
        values = np.full(grid.shape, float(p["baseline"]))
        mode = np.cos(np.pi * k * axes[0] / grid.extent[0])
        if grid.dim == 2:
            mode = np.multiply.outer(
                mode, np.cos(np.pi * k * axes[1] / grid.extent[1])
            )
        values = values + float(p["amplitude"]) * mode
    elif spec.kind == "gaussian":
        width = float(p["width"])
        if width <= 0:
            raise ConfigError(f"gaussian width must be positive, got {width}")
        center = p["center"]
        centers = (
            (float(center),)
            if isinstance(center, (int, float))
            else tuple(float(c) for c in center)
        )
        if len(centers) != grid.dim:
            raise ConfigError(
                f"gaussian center needs {grid.dim} coordinates, got {centers}"
            )
        axes = grid.cell_centers()
        q = np.square(axes[0] - centers[0])
        if grid.dim == 2:
            q = np.add.outer(q, np.square(axes[1] - centers[1]))
        values = float(p["baseline"]) + float(p["amplitude"]) * np.exp(
            -q / (2.0 * width * width)
        )
    else:  # from_file
        try:
            loaded, _ = load_field(str(p["path"]))
        except Exception as exc:
            raise ConfigError(f"from_file {p['path']!r}: {exc}") from exc
        if loaded.grid.cells != grid.cells or not math.isclose(
            loaded.grid.h, grid.h, rel_tol=1e-12
        ):
            raise ConfigError(
                f"from_file {p['path']!r}: grid {loaded.grid.cells} "
                f"h={loaded.grid.h} does not match scenario {grid.cells} "
                f"h={grid.h}"
            )
        values = loaded.values
    if nonneg:
        floor = float(values.min())
        scale = max(1.0, float(np.abs(values).max()))
        if floor < -_CLAMP_RTOL * scale:
            raise ConfigError(
                f"generator {spec.kind!r} produced negative data "
                f"(min {floor}); initial fields must be nonnegative"
            )
        if floor < 0.0:
            values = np.maximum(values, 0.0)
    return Field(grid, values)


def build_params(cfg: ScenarioConfig) -> ModelParams:
    """Grid plus generated initial data, ready to run."""
    grid = build_grid(cfg)
    u0 = generate_field(cfg.initial_u, grid)
    if integrate(u0) <= 0.0:
        raise ConfigError("initial u must carry positive mass")
    return ModelParams(
        grid=grid,
        delta=cfg.delta,
        u0=u0,
        v0=generate_field(cfg.initial_v, grid),
        w0=generate_field(cfg.initial_w, grid),
    )


def build_step_config(cfg: ScenarioConfig) -> StepConfig:
    return StepConfig(
        dt=cfg.dt,
        advection_scheme=cfg.advection_scheme,
        linear_tol=cfg.linear_tol,
        cfl_safety=cfg.cfl_safety,
    )
