"""Time-series, field, and snapshot files.

Two field formats, selected by extension: ``.csv`` is one value per line
after a single header comment, at 17 significant digits so float64 survives
the text round trip; ``.bin`` is a little-endian block with an 8-byte magic
followed by dim, nx[, ny], the cell size, the sample time, and the raw
C-ordered float64 values.  A snapshot of a full state writes one field file
per component with ``.u``/``.v``/``.w`` inserted before the extension.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Union

import numpy as np

from chis.diagnostics import Trajectory
from chis.errors import SnapshotFormatError
from chis.grid import Field, GridSpec
from chis.stepper import State

__all__ = [
    "MAGIC",
    "TIMESERIES_COLUMNS",
    "emit_timeseries",
    "save_field",
    "load_field",
    "emit_snapshot",
    "load_snapshot",
    "snapshot_field_paths",
]

MAGIC = b"CHIS0001"

TIMESERIES_COLUMNS = (
    "t", "mass", "u_linf", "v_linf", "w_linf", "u_l2", "v_l2", "w_l2",
    "E_p", "F_p", "dirichlet_p", "fisher", "cross_vw", "grad_v_sq",
    "cum_vw", "cum_grad_v_sq", "cum_fisher", "dist_u", "dist_v", "dist_w",
)

_FIELD_EXTENSIONS = (".csv", ".bin")


def emit_timeseries(traj: Trajectory, path: Union[str, Path]) -> None:
    """One CSV row per diagnostic sample, fixed column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMESERIES_COLUMNS)
        for rec in traj.records:
            writer.writerow(
                format(getattr(rec, col), ".17g") for col in TIMESERIES_COLUMNS
            )


def _check_extension(path: Path) -> str:
    if path.suffix not in _FIELD_EXTENSIONS:
        raise SnapshotFormatError(
            f"{path}: unknown field-file extension {path.suffix!r}, "
            f"expected one of {_FIELD_EXTENSIONS}"
        )
    return path.suffix


def save_field(field: Field, t: float, path: Union[str, Path]) -> None:
    """Write one field with its grid geometry and sample time."""
    path = Path(path)
    ext = _check_extension(path)
    g = field.grid
    if ext == ".csv":
        lines = [_csv_header(g, t)]
        lines.extend(format(x, ".17g") for x in field.values.ravel())
        path.write_text("\n".join(lines) + "\n")
        return
    head = struct.pack("<8sI", MAGIC, g.dim)
    head += struct.pack(f"<{g.dim}I", *g.cells)
    head += struct.pack("<dd", g.h, float(t))
    path.write_bytes(head + field.values.astype("<f8").tobytes())


def _csv_header(g: GridSpec, t: float) -> str:
    sizes = " ".join(
        f"{name}={n}" for name, n in zip(("nx", "ny"), g.cells)
    )
    return (
        f"# {MAGIC.decode()} dim={g.dim} {sizes} "
        f"h={g.h:.17g} t={float(t):.17g}"
    )


def _grid_from_header(dim: int, cells: tuple[int, ...], h: float, path: Path) -> GridSpec:
    if dim not in (1, 2) or len(cells) != dim:
        raise SnapshotFormatError(f"{path}: bad dimension/cell header")
    if h <= 0.0 or not np.isfinite(h) or any(n < 2 for n in cells):
        raise SnapshotFormatError(f"{path}: bad geometry h={h} cells={cells}")
    return GridSpec(dim=dim, extent=tuple(h * n for n in cells), cells=cells)


def load_field(path: Union[str, Path]) -> tuple[Field, float]:
    """Read a field file back; returns the field and its sample time.

    Raises:
        SnapshotFormatError: missing file, bad magic, malformed header, or a
            value count that disagrees with the declared grid.
    """
    path = Path(path)
    ext = _check_extension(path)
    if not path.exists():
        raise SnapshotFormatError(f"{path}: no such file")
    if ext == ".csv":
        return _load_field_csv(path)
    return _load_field_bin(path)


def _load_field_csv(path: Path) -> tuple[Field, float]:
    with open(path) as fh:
        header = fh.readline().strip()
        parts = header.split()
        if parts[:2] != ["#", MAGIC.decode()]:
            raise SnapshotFormatError(f"{path}: missing field-file header")
        try:
            kv = dict(p.split("=", 1) for p in parts[2:])
            dim = int(kv["dim"])
            cells = tuple(int(kv[k]) for k in ("nx", "ny")[:dim])
            h = float(kv["h"])
            t = float(kv["t"])
        except (KeyError, ValueError) as exc:
            raise SnapshotFormatError(f"{path}: malformed header: {exc}") from exc
        grid = _grid_from_header(dim, cells, h, path)
        values = np.loadtxt(fh, dtype=np.float64, ndmin=1)
    if values.size != grid.cell_count:
        raise SnapshotFormatError(
            f"{path}: {values.size} values for {grid.cell_count} cells"
        )
    return Field(grid, values.reshape(grid.shape)), t


def _load_field_bin(path: Path) -> tuple[Field, float]:
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise SnapshotFormatError(f"{path}: missing or foreign magic bytes")
    (dim,) = struct.unpack_from("<I", raw, 8)
    if dim not in (1, 2):
        raise SnapshotFormatError(f"{path}: bad dimension {dim}")
    off = 12
    cells = struct.unpack_from(f"<{dim}I", raw, off)
    off += 4 * dim
    h, t = struct.unpack_from("<dd", raw, off)
    off += 16
    grid = _grid_from_header(dim, cells, h, path)
    expect = off + 8 * grid.cell_count
    if len(raw) != expect:
        raise SnapshotFormatError(
            f"{path}: {len(raw)} bytes, expected {expect} for {cells} cells"
        )
    values = np.frombuffer(raw, dtype="<f8", offset=off).reshape(grid.shape)
    return Field(grid, values), t


def snapshot_field_paths(path: Union[str, Path]) -> dict[str, Path]:
    """The three per-component file names a snapshot basename expands to."""
    path = Path(path)
    _check_extension(path)
    stem = path.with_suffix("")
    return {
        name: Path(f"{stem}.{name}{path.suffix}") for name in ("u", "v", "w")
    }


def emit_snapshot(state: State, path: Union[str, Path]) -> None:
    """Write the full state as three field files sharing one basename."""
    paths = snapshot_field_paths(path)
    save_field(state.u, state.t, paths["u"])
    save_field(state.v, state.t, paths["v"])
    save_field(state.w, state.t, paths["w"])


def load_snapshot(path: Union[str, Path]) -> State:
    """Reassemble a state from its three field files.

    Raises:
        SnapshotFormatError: any component missing or the components disagree
            on grid geometry or sample time.
    """
    paths = snapshot_field_paths(path)
    u, tu = load_field(paths["u"])
    v, tv = load_field(paths["v"])
    w, tw = load_field(paths["w"])
    if not (u.grid == v.grid == w.grid):
        raise SnapshotFormatError(f"{path}: component grids disagree")
    if not (tu == tv == tw):
        raise SnapshotFormatError(
            f"{path}: component times disagree ({tu}, {tv}, {tw})"
        )
    # share one grid object so downstream equality checks stay cheap
    v = Field(u.grid, v.values)
    w = Field(u.grid, w.values)
    return State(u=u, v=v, w=w, t=tu)
