"""Output writers: legacy-ASCII VTK snapshots and CSV time series.

Floating-point values are printed with ``%.17g`` so that repeated runs of the
same build produce byte-identical files (the wall-clock column of the time
series is the one intentionally non-reproducible field; comparisons must skip
it).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import Mesh

__all__ = [
    "write_vtk",
    "TimeSeriesWriter",
    "TIMESERIES_FIELDS",
    "GL_DIAG_FIELDS",
    "read_timeseries",
    "write_gl_diag",
    "compare_timeseries",
]

TIMESERIES_FIELDS = ("t", "p_crack_max", "total_dofs", "gl_iters", "wall_ms")
GL_DIAG_FIELDS = (
    "step", "t", "kind", "count",
    "imbalance_u", "imbalance_p", "moment_gap_u", "moment_gap_p",
    "phase_drift", "footprint_cells",
)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_vtk(path, mesh: Mesh, point_data: dict):
    """Write an unstructured-grid legacy VTK file with nodal fields.

    ``point_data`` maps names to ``(n_nodes,)`` scalars or ``(n_nodes, 2)``
    vectors (padded with a zero third component).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, c = mesh.n_nodes, mesh.n_cells
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("hydrofrac snapshot\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {n} double\n")
        for x, y in mesh.nodes:
            f.write(f"{_fmt(x)} {_fmt(y)} 0\n")
        f.write(f"CELLS {c} {5 * c}\n")
        for cell in mesh.cells:
            f.write("4 " + " ".join(str(int(v)) for v in cell) + "\n")
        f.write(f"CELL_TYPES {c}\n")
        f.write("\n".join(["9"] * c) + "\n")
        f.write(f"POINT_DATA {n}\n")
        for name, vals in point_data.items():
            vals = np.asarray(vals)
            if vals.ndim == 1:
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in vals:
                    f.write(_fmt(v) + "\n")
            else:
                f.write(f"VECTORS {name} double\n")
                for vx, vy in vals:
                    f.write(f"{_fmt(vx)} {_fmt(vy)} 0\n")


class TimeSeriesWriter:
    """Streaming CSV writer for the per-step monitor record."""

    def __init__(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "w", newline="")
        self._csv = csv.writer(self._fh)
        self._csv.writerow(TIMESERIES_FIELDS)
        self._fh.flush()

    def write(self, rec):
        self._csv.writerow(
            [
                _fmt(rec.t), _fmt(rec.p_crack_max), rec.total_dofs,
                rec.gl_iters, _fmt(rec.wall_ms),
            ]
        )
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_timeseries(path) -> dict:
    """Read a time-series CSV into a dict of float arrays."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"empty time series: {path}")
    out = {}
    for k in rows[0]:
        out[k] = np.array([float(r[k]) for r in rows])
    return out


def write_gl_diag(path, rows):
    """Write the interface-iteration diagnostic log of a global/local run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(GL_DIAG_FIELDS)
        for step, t, kind, count, eu, ep, bu, bp, dd, ncells in rows:
            w.writerow(
                [step, _fmt(t), kind, count, _fmt(eu), _fmt(ep), _fmt(bu),
                 _fmt(bp), _fmt(dd), ncells]
            )


def compare_timeseries(path_a, path_b, rtol, column="p_crack_max"):
    """Pointwise relative comparison of a monitor column of two runs.

    Rows are matched by time (grids must agree).  The relative difference at
    a row is ``|a - b| / max(|a|, |b|)`` (zero when both vanish).

    Returns
    -------
    ok : bool
    max_rel : float
    detail : str
    """
    A = read_timeseries(path_a)
    B = read_timeseries(path_b)
    if len(A["t"]) != len(B["t"]) or np.max(np.abs(A["t"] - B["t"])) > 1e-9 * max(
        1.0, np.max(np.abs(A["t"]))
    ):
        return False, np.inf, "time grids differ"
    a, b = A[column], B[column]
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    rel = np.abs(a - b) / scale
    rel[(a == 0.0) & (b == 0.0)] = 0.0
    i = int(np.argmax(rel))
    detail = (
        f"max relative difference {rel[i]:.3e} at t={A['t'][i]:g} "
        f"({column}: {a[i]:.6g} vs {b[i]:.6g})"
    )
    return bool(np.all(rel <= rtol)), float(rel.max()), detail
