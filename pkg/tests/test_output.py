import json

import numpy as np

from plhom.geometry import build_cell, build_perforated_mesh
from plhom.micro import MicroRunConfig, run_micro
from plhom.nonlinearity import zero
from plhom.output import RunManifest, diagnostics_csv, read_vtk_points, vtk_text, write_vtk


def test_vtk_roundtrip(perforated16, tmp_path):
    u = np.sin(perforated16.nodes[:, 0])
    path = tmp_path / "u.vtk"
    write_vtk(path, perforated16, {"u": u})
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version 3.0")
    assert f"CELLS {len(perforated16.elements)} {4 * len(perforated16.elements)}" in text
    pts, vals = read_vtk_points(text)
    assert np.array_equal(pts[:, :2], perforated16.nodes) and np.array_equal(vals, u)


def test_vtk_tetrahedra():
    m = build_perforated_mesh(build_cell(3, "cube"), epsilon=0.5, target_h=0.125)
    text = vtk_text(m)
    assert "CELL_TYPES" in text and text.strip().endswith("10")


def test_diagnostics_csv(perforated16):
    tr = run_micro(perforated16, MicroRunConfig(2.0, 1.0, 0.25, 0.05, 0.1, zero(), zero()))
    lines = diagnostics_csv(tr, "run.manifest.json").splitlines()
    assert lines[0] == "# manifest: run.manifest.json"
    assert lines[1] == "t,h_norm,w1p_norm,energy_residual,newton_iterations"
    assert len(lines) == 2 + len(tr.states)


def test_manifest_json(tmp_path):
    m = RunManifest("cell", {"p": np.float64(2.0)}, results={"ok": np.bool_(True), "a": np.eye(2)})
    m.write(tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["config"]["p"] == 2.0 and d["results"]["ok"] is True and d["code_version"]
