"""Uniform cell-centered grids and the fields living on them.

The domain is the open interval (0, Lx) or rectangle (0, Lx) x (0, Ly),
partitioned into squares of side h with cell centers at (i + 1/2) h.  A Field
stores one value per cell, read as the cell average.  All reductions use the
midpoint rule, i.e. sums weighted by the cell measure h**dim, which makes the
discrete integral exactly linear and the discrete divergence theorem exact for
the face-flux operators built on top of this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "Field",
    "integrate",
    "lp_norm",
    "linf_norm",
    "mean",
]

# Relative slack when validating that both axes share one cell size.
_ISOTROPY_RTOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned rectangle with a uniform, isotropic cell partition.

    Args:
        dim: 1 or 2.
        extent: side lengths (Lx,) or (Lx, Ly), all positive.
        cells: cell counts per axis, each >= 2; Lx/nx must equal Ly/ny.
    """

    dim: int
    extent: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        extent = tuple(float(L) for L in self.extent)
        cells = tuple(int(n) for n in self.cells)
        if len(extent) != self.dim or len(cells) != self.dim:
            raise ValueError(
                f"extent/cells must have {self.dim} entries, got "
                f"{len(extent)}/{len(cells)}"
            )
        if any(L <= 0 or not np.isfinite(L) for L in extent):
            raise ValueError(f"extents must be positive and finite, got {extent}")
        if any(n < 2 for n in cells):
            raise ValueError(f"need at least 2 cells per axis, got {cells}")
        spacings = [L / n for L, n in zip(extent, cells)]
        h = spacings[0]
        if any(abs(s - h) > _ISOTROPY_RTOL * h for s in spacings[1:]):
            raise ValueError(
                f"cells must be square: spacings {spacings} differ between axes"
            )
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "cells", cells)

    @property
    def h(self) -> float:
        """Cell side length."""
        return self.extent[0] / self.cells[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def cell_count(self) -> int:
        n = 1
        for c in self.cells:
            n *= c
        return n

    @property
    def volume(self) -> float:
        vol = 1.0
        for L in self.extent:
            vol *= L
        return vol

    def cell_centers(self) -> tuple[np.ndarray, ...]:
        """Per-axis center coordinates (i + 1/2) h."""
        h = self.h
        return tuple((np.arange(n) + 0.5) * h for n in self.cells)


@dataclass(frozen=True)
class Field:
    """Cell-averaged scalar field; values are finite and read-only.

    Raises:
        ValueError: on shape mismatch or non-finite entries.
    """

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if vals.shape != self.grid.shape:
            raise ValueError(
                f"values shape {vals.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def full(cls, grid: GridSpec, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))


def integrate(f: Field) -> float:
    """Midpoint-rule integral: sum of cell values times the cell measure."""
    return float(f.values.sum()) * f.grid.h ** f.grid.dim


def lp_norm(f: Field, p: float) -> float:
    """Discrete L^p norm, finite p >= 1.

    Raises:
        ValueError: if p < 1 or p is not finite.
    """
    p = float(p)
    if not np.isfinite(p) or p < 1.0:
        raise ValueError(f"lp_norm needs finite p >= 1, got {p}")
    meas = f.grid.h ** f.grid.dim
    return float((np.abs(f.values) ** p).sum() * meas) ** (1.0 / p)


def linf_norm(f: Field) -> float:
    """Max absolute cell value."""
    return float(np.abs(f.values).max())


def mean(f: Field) -> float:
    """Integral divided by the domain volume."""
    return integrate(f) / f.grid.volume
