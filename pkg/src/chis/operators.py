"""Finite-volume stencils with no-flux (mirror-ghost) boundaries.

Every operator here is assembled from face quantities on the uniform grid:
the Laplacian sums face differences, the transport term sums face fluxes
u_face * (v_R - v_L) / h, and boundary faces carry zero flux.  Summing any of
these divergences against the cell measure therefore telescopes to zero, which
is what the conservation checks downstream rely on.  The squared-gradient
field averages the two one-sided face differences per axis so that its
integral reproduces the summation-by-parts quadratic form -<f, lap f> exactly.

Array-level kernels (``*_array``) are shared with the time stepper's hot loop;
the public operations validate and wrap ``Field`` values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chis.errors import GridMismatchError
from chis.grid import Field, GridSpec

__all__ = [
    "StencilConfig",
    "laplacian_neumann",
    "chemotaxis_divergence",
    "gradient_sq",
    "power_field",
    "max_face_gradient",
]

ADVECTION_SCHEMES = ("central", "upwind")


@dataclass(frozen=True)
class StencilConfig:
    """Discretization choices for the transport term."""

    advection_scheme: str = "central"

    def __post_init__(self) -> None:
        if self.advection_scheme not in ADVECTION_SCHEMES:
            raise ValueError(
                f"advection_scheme must be one of {ADVECTION_SCHEMES}, "
                f"got {self.advection_scheme!r}"
            )


# ---------------------------------------------------------------------------
# array kernels
# ---------------------------------------------------------------------------


def lap_array(vals: np.ndarray, h: float) -> np.ndarray:
    """3/5-point Laplacian with mirrored ghost cells (zero-flux faces)."""
    out = np.empty_like(vals)
    out[1:-1] = vals[:-2] - 2.0 * vals[1:-1] + vals[2:]
    out[0] = vals[1] - vals[0]
    out[-1] = vals[-2] - vals[-1]
    if vals.ndim == 2:
        out[:, 1:-1] += vals[:, :-2] - 2.0 * vals[:, 1:-1] + vals[:, 2:]
        out[:, 0] += vals[:, 1] - vals[:, 0]
        out[:, -1] += vals[:, -2] - vals[:, -1]
    out /= h * h
    return out


def _axis_flux(u: np.ndarray, dv: np.ndarray, lo, hi, upwind: bool) -> np.ndarray:
    if upwind:
        # donor cell: face velocity (v_R - v_L)/h > 0 pushes mass rightward
        uf = np.where(dv > 0.0, u[lo], u[hi])
    else:
        uf = 0.5 * (u[lo] + u[hi])
    return uf * dv


def chemdiv_array(
    u: np.ndarray, v: np.ndarray, h: float, upwind: bool
) -> np.ndarray:
    """Divergence of the chemotactic flux u * grad v, flux form.

    Interior face flux is u_face * (v_R - v_L)/h with u_face either the
    arithmetic mean (central) or the donor cell selected by the sign of
    v_R - v_L (upwind); boundary faces carry zero flux.
    """
    out = np.zeros_like(u)
    dv = v[1:] - v[:-1]
    flux = _axis_flux(u, dv, slice(0, -1), slice(1, None), upwind)
    out[:-1] += flux
    out[1:] -= flux
    if u.ndim == 2:
        dv = v[:, 1:] - v[:, :-1]
        flux = _axis_flux(
            u, dv, (slice(None), slice(0, -1)), (slice(None), slice(1, None)), upwind
        )
        out[:, :-1] += flux
        out[:, 1:] -= flux
    out /= h * h
    return out


def gradsq_array(vals: np.ndarray, h: float) -> np.ndarray:
    """Cellwise |grad f|^2: per-axis mean of the squared face differences."""
    out = np.zeros_like(vals)
    d2 = np.square(vals[1:] - vals[:-1])
    out[:-1] += d2
    out[1:] += d2
    if vals.ndim == 2:
        d2 = np.square(vals[:, 1:] - vals[:, :-1])
        out[:, :-1] += d2
        out[:, 1:] += d2
    out /= 2.0 * h * h
    return out


def max_face_grad_array(vals: np.ndarray, h: float) -> float:
    """Largest |v_R - v_L|/h over interior faces."""
    m = float(np.abs(vals[1:] - vals[:-1]).max())
    if vals.ndim == 2:
        m = max(m, float(np.abs(vals[:, 1:] - vals[:, :-1]).max()))
    return m / h


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _require_same_grid(a: Field, b: Field) -> GridSpec:
    if a.grid != b.grid:
        raise GridMismatchError(
            f"operands live on different grids: {a.grid} vs {b.grid}"
        )
    return a.grid


def laplacian_neumann(f: Field) -> Field:
    """Discrete Laplacian with zero-flux boundaries."""
    return Field(f.grid, lap_array(f.values, f.grid.h))


def chemotaxis_divergence(u: Field, v: Field, cfg: StencilConfig) -> Field:
    """div(u grad v) in conservative flux form.

    Raises:
        GridMismatchError: if u and v live on different grids.
    """
    g = _require_same_grid(u, v)
    upwind = cfg.advection_scheme == "upwind"
    return Field(g, chemdiv_array(u.values, v.values, g.h, upwind))


def gradient_sq(f: Field) -> Field:
    """Cellwise squared gradient; boundary faces contribute zero."""
    return Field(f.grid, gradsq_array(f.values, f.grid.h))


def power_field(f: Field, q: float) -> Field:
    """Pointwise power f**q with 0**q = 0 for q > 0.

    Raises:
        ValueError: for negative bases with a non-integer exponent, or zero
            bases with a non-positive exponent.
    """
    q = float(q)
    vals = f.values
    if q != np.round(q) and np.any(vals < 0.0):
        raise ValueError("negative base with fractional exponent")
    if q <= 0.0 and np.any(vals == 0.0):
        raise ValueError("zero base with non-positive exponent")
    return Field(f.grid, np.power(vals, q))


def max_face_gradient(v: Field) -> float:
    """Largest face gradient magnitude; drives the advective step limit."""
    return max_face_grad_array(v.values, v.grid.h)
