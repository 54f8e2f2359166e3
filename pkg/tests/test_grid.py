"""Grid and field layer: measure-consistent reductions on cell averages."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chis.grid import Field, GridSpec, integrate, linf_norm, lp_norm, mean


def unit_grid(nx=8):
    return GridSpec(dim=1, extent=(1.0,), cells=(nx,))


class TestGridSpec:
    def test_basic_1d(self):
        g = GridSpec(dim=1, extent=(2.0,), cells=(8,))
        assert g.h == pytest.approx(0.25)
        assert g.shape == (8,)
        assert g.cell_count == 8
        assert g.volume == pytest.approx(2.0)

    def test_cell_centers_offset(self):
        g = GridSpec(dim=1, extent=(1.0,), cells=(4,))
        (x,) = g.cell_centers()
        assert np.allclose(x, [0.125, 0.375, 0.625, 0.875])

    def test_2d_isotropic(self):
        g = GridSpec(dim=2, extent=(1.0, 0.5), cells=(16, 8))
        assert g.h == pytest.approx(1.0 / 16)
        assert g.shape == (16, 8)
        assert g.volume == pytest.approx(0.5)
        x, y = g.cell_centers()
        assert x.shape == (16,) and y.shape == (8,)
        assert y[0] == pytest.approx(g.h / 2)

    def test_rejects_bad_dim(self):
        with pytest.raises(ValueError):
            GridSpec(dim=3, extent=(1.0, 1.0, 1.0), cells=(4, 4, 4))

    def test_rejects_single_cell(self):
        with pytest.raises(ValueError):
            GridSpec(dim=1, extent=(1.0,), cells=(1,))

    def test_rejects_anisotropic_cells(self):
        # h would differ between axes
        with pytest.raises(ValueError):
            GridSpec(dim=2, extent=(1.0, 1.0), cells=(16, 8))

    def test_rejects_nonpositive_extent(self):
        with pytest.raises(ValueError):
            GridSpec(dim=1, extent=(0.0,), cells=(4,))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            GridSpec(dim=1, extent=(1.0, 1.0), cells=(4,))


class TestField:
    def test_wraps_and_freezes(self):
        g = unit_grid(4)
        f = Field(g, [1.0, 2.0, 3.0, 4.0])
        assert f.values.dtype == np.float64
        with pytest.raises(ValueError):
            f.values[0] = 9.0

    def test_rejects_nan_and_inf(self):
        g = unit_grid(4)
        with pytest.raises(ValueError):
            Field(g, [1.0, np.nan, 0.0, 0.0])
        with pytest.raises(ValueError):
            Field(g, [1.0, np.inf, 0.0, 0.0])

    def test_rejects_wrong_shape(self):
        g = unit_grid(4)
        with pytest.raises(ValueError):
            Field(g, [1.0, 2.0])


class TestReductions:
    def test_integrate_ones_is_volume(self):
        g = GridSpec(dim=1, extent=(2.0,), cells=(16,))
        assert integrate(Field.full(g, 1.0)) == pytest.approx(2.0, rel=1e-14)

    def test_mean_single_value(self):
        g = unit_grid(8)
        assert mean(Field.full(g, 3.5)) == pytest.approx(3.5, rel=1e-14)

    def test_lp_norm_half_indicator(self):
        # f = 2 on the left half of the unit interval, 0 elsewhere; p = 3:
        # (integral of 8 over measure 1/2)^(1/3) = 4^(1/3)
        g = unit_grid(8)
        vals = np.zeros(8)
        vals[:4] = 2.0
        f = Field(g, vals)
        assert lp_norm(f, 3.0) == pytest.approx(4.0 ** (1.0 / 3.0), rel=1e-14)

    def test_lp_norm_rejects_p_below_one(self):
        g = unit_grid(4)
        f = Field.full(g, 1.0)
        with pytest.raises(ValueError):
            lp_norm(f, 0.5)

    def test_linf_of_sampled_sine(self):
        # cell centers (i+1/2)/8: the largest |sin(2 pi x)| sample is sin(3*pi/8)
        g = unit_grid(8)
        (x,) = g.cell_centers()
        f = Field(g, np.sin(2.0 * np.pi * x))
        assert linf_norm(f) == pytest.approx(np.sin(3.0 * np.pi / 8.0), rel=1e-14)

    def test_integrate_2d(self):
        g = GridSpec(dim=2, extent=(1.0, 1.0), cells=(8, 8))
        x, y = g.cell_centers()
        f = Field(g, np.outer(x, np.ones(8)))
        # midpoint rule is exact for linear integrands
        assert integrate(f) == pytest.approx(0.5, rel=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(
        st.integers(min_value=2, max_value=64),
        st.floats(-10, 10, allow_nan=False),
        st.floats(-10, 10, allow_nan=False),
        st.integers(0, 2**31 - 1),
    )
    def test_integrate_linear(self, nx, a, b, seed):
        g = unit_grid(nx)
        rng = np.random.default_rng(seed)
        f = Field(g, rng.standard_normal(nx))
        q = Field(g, rng.standard_normal(nx))
        combo = Field(g, a * f.values + b * q.values)
        lhs = integrate(combo)
        rhs = a * integrate(f) + b * integrate(q)
        scale = max(abs(lhs), abs(rhs), 1e-30)
        assert abs(lhs - rhs) <= 1e-14 * max(scale, 1.0) + 1e-15

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_lp_monotone_on_unit_measure(self, seed):
        # On a probability measure the L^p norms are nondecreasing in p.
        g = unit_grid(16)
        rng = np.random.default_rng(seed)
        f = Field(g, rng.standard_normal(16))
        norms = [lp_norm(f, p) for p in (1.0, 2.0, 4.0, 8.0)]
        for lo, hi in zip(norms, norms[1:]):
            assert lo <= hi * (1 + 1e-12)
        assert norms[-1] <= linf_norm(f) * (1 + 1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_hoelder(self, seed):
        g = unit_grid(16)
        rng = np.random.default_rng(seed)
        f = Field(g, rng.standard_normal(16))
        q = Field(g, rng.standard_normal(16))
        prod = Field(g, np.abs(f.values * q.values))
        assert integrate(prod) <= lp_norm(f, 3.0) * lp_norm(q, 1.5) * (1 + 1e-12)

    def test_lp_equals_linf_limit_consistency(self):
        g = unit_grid(8)
        f = Field(g, np.linspace(-1.0, 2.0, 8))
        assert lp_norm(f, 64.0) <= linf_norm(f) * (1 + 1e-12)
