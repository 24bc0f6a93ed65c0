"""File outputs: legacy VTK field dumps, diagnostics CSV and run manifests."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
import csv
import io
import json
import platform

import numpy as np

from . import __version__

_VTK_CELL = {(2, 3): 5, (3, 4): 10}  # triangle, tetrahedron


def vtk_text(mesh, point_data=None, title="plhom field"):
    """Legacy ASCII VTK unstructured grid with nodal ``point_data``."""
    nodes = mesh.nodes
    els = mesh.elements
    code = _VTK_CELL[(mesh.dim, els.shape[1])]
    pts = np.zeros((len(nodes), 3))
    pts[:, :mesh.dim] = nodes
    out = io.StringIO()
    out.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {len(pts)} double\n")
    np.savetxt(out, pts, fmt="%.17g")
    k = els.shape[1]
    out.write(f"CELLS {len(els)} {len(els) * (k + 1)}\n")
    np.savetxt(out, np.column_stack([np.full(len(els), k), els]), fmt="%d")
    out.write(f"CELL_TYPES {len(els)}\n")
    np.savetxt(out, np.full(len(els), code), fmt="%d")
    if point_data:
        out.write(f"POINT_DATA {len(pts)}\n")
        for name, vals in point_data.items():
            vals = np.asarray(vals, float)
            if vals.shape != (len(pts),):
                raise ValueError(f"field {name!r} has shape {vals.shape}, expected ({len(pts)},)")
            out.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(out, vals, fmt="%.17g")
    return out.getvalue()


def write_vtk(path, mesh, point_data=None, title="plhom field"):
    with open(path, "w") as fh:
        fh.write(vtk_text(mesh, point_data, title))


def read_vtk_points(text):
    """Parse POINTS and the first SCALARS block back (used for round trips)."""
    lines = text.splitlines()
    i = next(k for k, l in enumerate(lines) if l.startswith("POINTS"))
    n = int(lines[i].split()[1])
    pts = np.array([list(map(float, l.split())) for l in lines[i + 1:i + 1 + n]])
    vals = None
    for k, l in enumerate(lines):
        if l.startswith("SCALARS"):
            vals = np.array([float(v) for v in lines[k + 2:k + 2 + n]])
            break
    return pts, vals


def diagnostics_csv(traj, manifest_name=None):
    """Per-step diagnostics of a micro or macro trajectory."""
    buf = io.StringIO()
    if manifest_name:
        buf.write(f"# manifest: {manifest_name}\n")
    w = csv.writer(buf, lineterminator="\n")
    if hasattr(traj, "energy_residual"):
        w.writerow(["t", "h_norm", "w1p_norm", "energy_residual", "newton_iterations"])
        its = [0] + [r.iterations for r in traj.newton_reports]
        for (t, h, n1p, e), k in zip(traj.diagnostics_rows(), its):
            w.writerow([repr(float(t)), repr(float(h)), repr(float(n1p)), repr(float(e)), k])
    else:
        w.writerow(["t", "h_norm", "newton_iterations"])
        its = [0] + [r.iterations for r in traj.newton_reports]
        for t, h, k in zip(traj.times, traj.h_norm, its):
            w.writerow([repr(float(t)), repr(float(h)), k])
    return buf.getvalue()


@dataclass
class RunManifest:
    """Everything needed to reproduce one output file."""

    command: str
    config: dict
    mesh: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    delta: float = None
    admissibility: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    code_version: str = __version__

    def to_dict(self):
        d = asdict(self)
        d["environment"] = {"python": platform.python_version(), "numpy": np.__version__}
        return d

    def to_json(self):
        return json.dumps(_plain(self.to_dict()), indent=2, sort_keys=True)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj
