"""Configuration tests: strict loading, canonical dumping, generators,
and materialization into runnable objects.

Line-anchor tests pin the error ergonomics: a bad value is reported with
the line it sits on and the key it belongs to.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from chis.config import (
    GeneratorSpec,
    ScenarioConfig,
    build_grid,
    build_params,
    build_step_config,
    default_config,
    dump_config,
    generate_field,
    load_config,
    load_config_file,
)
from chis.errors import ConfigError
from chis.fileio import save_field
from chis.grid import Field, GridSpec, integrate, linf_norm

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def test_empty_document_is_the_default():
    assert load_config("") == default_config()


def test_minimal_document_fills_defaults():
    cfg = load_config("[model]\ndelta = 2.5\n")
    assert cfg.delta == 2.5
    assert cfg.nx == 256 and cfg.T_final == 50.0
    assert cfg == ScenarioConfig(delta=2.5)


def test_name_key_is_top_level():
    assert load_config('name = "mine"\n').name == "mine"
    with pytest.raises(ConfigError, match="name must be a nonempty string"):
        load_config('name = ""\n')


def test_roundtrip_dump_load_identity():
    text = """
name = "roundtrip"
[domain]
dim = 2
extents = [2.0, 1.0]
nx = 32
ny = 16
[initial]
u = { kind = "gaussian", center = [1.0, 0.5], width = 0.2, amplitude = 1.0, baseline = 0.5 }
[numerics]
dt = 0.0005
snapshot_stride = 50
[checks]
run = ["mass_conservation", "comparison_principles"]
expected_fail = ["comparison_principles"]
p_sublinear = 0.03
tol_mass_conservation = 1e-9
"""
    cfg = load_config(text)
    assert load_config(dump_config(cfg)) == cfg
    assert load_config(dump_config(default_config())) == default_config()


def test_dump_is_valid_toml():
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    doc = tomllib.loads(dump_config(default_config()))
    assert set(doc) == {"name", "domain", "model", "initial", "numerics", "checks"}


@pytest.mark.parametrize(
    "path", sorted(SCENARIO_DIR.glob("*.toml")), ids=lambda p: p.stem
)
def test_shipped_scenarios_load(path):
    cfg = load_config_file(path)
    assert cfg.checks_run
    for cid in cfg.expected_fail:
        assert cid in cfg.checks_run


# ---------------------------------------------------------------------------
# rejection with line anchors
# ---------------------------------------------------------------------------


def test_bad_value_names_key_and_line():
    text = "[model]\ndelta = -1.0\n"
    with pytest.raises(ConfigError, match=r"line 2: delta must be positive"):
        load_config(text)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match=r"line 2: unknown key 'foo'"):
        load_config("[domain]\nfoo = 3\n")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match=r"unknown section \[bogus\]"):
        load_config("[bogus]\nx = 1\n")


def test_toml_syntax_error_rejected():
    with pytest.raises(ConfigError, match="not valid TOML"):
        load_config("= 5\n")


def test_type_mismatches_rejected():
    with pytest.raises(ConfigError, match="nx must be an integer"):
        load_config('[domain]\nnx = "many"\n')
    with pytest.raises(ConfigError, match="calibrate must be a boolean"):
        load_config("[checks]\ncalibrate = 3\n")
    with pytest.raises(ConfigError, match="array of strings"):
        load_config("[checks]\nrun = [3]\n")


def test_unknown_check_id_rejected():
    with pytest.raises(ConfigError, match="unknown check id 'nope'"):
        load_config('[checks]\nrun = ["nope"]\n')


def test_tolerance_overrides():
    cfg = load_config("[checks]\ntol_mass_conservation = 1e-9\n")
    assert cfg.tol_overrides == {"mass_conservation": 1e-9}
    with pytest.raises(ConfigError, match="must be >= 0"):
        load_config("[checks]\ntol_mass_conservation = -1e-9\n")


def test_equilibrium_targets_need_three_entries():
    with pytest.raises(ConfigError, match="three positive numbers"):
        load_config("[checks]\nequilibrium_targets = [1e-3, 1e-4]\n")


def test_p_sublinear_must_be_a_proper_fraction():
    with pytest.raises(ConfigError, match=r"p_sublinear must lie in \(0, 1\)"):
        load_config("[checks]\np_sublinear = 1.5\n")


def test_two_dimensional_cells_must_be_square():
    text = "[domain]\ndim = 2\nextents = [1.0, 0.5]\nnx = 16\nny = 16\n"
    with pytest.raises(ConfigError, match="cells must be square"):
        load_config(text)
    ok = load_config("[domain]\ndim = 2\nextents = [1.0, 0.5]\nnx = 16\nny = 8\n")
    assert ok.cells == (16, 8)
    assert build_grid(ok).h == pytest.approx(1.0 / 16.0)


def test_ny_forbidden_in_one_dimension():
    with pytest.raises(ConfigError, match="ny is only meaningful"):
        load_config("[domain]\nny = 8\n")


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def grid1d(n=32, L=1.0):
    return GridSpec(dim=1, extent=(L,), cells=(n,))


def test_unknown_generator_kind_rejected():
    with pytest.raises(ConfigError, match="unknown generator kind"):
        GeneratorSpec("blob", {})


def test_generator_parameter_set_is_exact():
    with pytest.raises(ConfigError, match="takes parameters"):
        GeneratorSpec("cosine_mode", {"k": 1, "amplitude": 0.5})
    with pytest.raises(ConfigError, match="takes parameters"):
        GeneratorSpec("constant", {"c": 1.0, "extra": 2.0})


def test_cosine_mode_matches_closed_form():
    g = grid1d(64)
    spec = GeneratorSpec("cosine_mode", {"k": 2, "amplitude": 0.25, "baseline": 1.0})
    f = generate_field(spec, g)
    x = g.cell_centers()[0]
    np.testing.assert_allclose(
        f.values, 1.0 + 0.25 * np.cos(2.0 * np.pi * x), rtol=0, atol=1e-15
    )


def test_cosine_mode_2d_is_separable():
    g = GridSpec(dim=2, extent=(1.0, 1.0), cells=(8, 8))
    spec = GeneratorSpec("cosine_mode", {"k": 1, "amplitude": 0.5, "baseline": 1.0})
    f = generate_field(spec, g)
    x, y = g.cell_centers()
    want = 1.0 + 0.5 * np.multiply.outer(np.cos(np.pi * x), np.cos(np.pi * y))
    np.testing.assert_allclose(f.values, want, rtol=0, atol=1e-15)


def test_negative_generator_data_rejected():
    spec = GeneratorSpec("cosine_mode", {"k": 1, "amplitude": 2.0, "baseline": 1.0})
    with pytest.raises(ConfigError, match="must be nonnegative"):
        generate_field(spec, grid1d())


def test_rounding_level_dip_clamped_to_zero():
    f = generate_field(GeneratorSpec("constant", {"c": -1e-15}), grid1d())
    assert f.values.min() == 0.0 and f.values.max() == 0.0


def test_gaussian_validation():
    g2 = GridSpec(dim=2, extent=(1.0, 1.0), cells=(8, 8))
    with pytest.raises(ConfigError, match="width must be positive"):
        generate_field(
            GeneratorSpec(
                "gaussian",
                {"center": 0.5, "width": 0.0, "amplitude": 1.0, "baseline": 0.0},
            ),
            grid1d(),
        )
    with pytest.raises(ConfigError, match="center needs 2 coordinates"):
        generate_field(
            GeneratorSpec(
                "gaussian",
                {"center": 0.5, "width": 0.1, "amplitude": 1.0, "baseline": 0.0},
            ),
            g2,
        )
    f = generate_field(
        GeneratorSpec(
            "gaussian",
            {"center": 0.5, "width": 0.1, "amplitude": 2.0, "baseline": 1.0},
        ),
        grid1d(64),
    )
    mid = f.values[31:33].max()
    assert mid == f.values.max() and mid <= 3.0 and f.values.min() >= 1.0


def test_from_file_loads_and_checks_geometry(tmp_path):
    g = grid1d(16)
    src = Field(g, np.linspace(0.5, 1.5, 16))
    path = tmp_path / "u.bin"
    save_field(src, 0.0, path)
    spec = GeneratorSpec("from_file", {"path": str(path)})
    f = generate_field(spec, g)
    assert np.array_equal(f.values, src.values)
    with pytest.raises(ConfigError, match="does not match scenario"):
        generate_field(spec, grid1d(32))
    missing = GeneratorSpec("from_file", {"path": str(tmp_path / "gone.bin")})
    with pytest.raises(ConfigError, match="from_file"):
        generate_field(missing, g)


# ---------------------------------------------------------------------------
# materialization
# ---------------------------------------------------------------------------


def test_build_params_default_initial_data():
    cfg = ScenarioConfig(nx=64)
    params = build_params(cfg)
    assert integrate(params.u0) == pytest.approx(1.0, rel=1e-14)
    h = build_grid(cfg).h
    # the signal peak sits at the first cell center, half a cell off the wall
    want = (1.0 / 6.0) * (1.0 + math.cos(math.pi * h / 2.0)) / 2.0
    assert linf_norm(params.v0) == pytest.approx(want, rel=1e-14)
    assert params.delta == 1.0


def test_build_params_rejects_massless_density():
    cfg = ScenarioConfig(
        nx=16, initial_u=GeneratorSpec("constant", {"c": 0.0})
    )
    with pytest.raises(ConfigError, match="positive mass"):
        build_params(cfg)


def test_build_step_config_maps_numerics():
    cfg = ScenarioConfig(
        dt=1e-3, cfl_safety=0.5, advection_scheme="upwind", linear_tol=1e-11
    )
    sc = build_step_config(cfg)
    assert sc.dt == 1e-3
    assert sc.cfl_safety == 0.5
    assert sc.advection_scheme == "upwind"
    assert sc.linear_tol == 1e-11
