import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plhom.errors import HoleTouchesCellBoundary, MeshTooCoarse, NonTilingEpsilon, UnsupportedDim
from plhom.geometry import (HOLE, OUTER, DiskHole, RectHole, build_cell, build_domain_mesh,
                            build_perforated_mesh, build_periodic_cell_mesh, measures, mesh_statistics)


def test_square_cell_measures(square_cell):
    assert square_cell.theta == 0.75
    assert square_cell.sigma == 2.0
    assert square_cell.polygon_tolerance == 0.0


def test_disk_cell_within_polygon_tolerance():
    c = build_cell(2, "disk")
    assert abs(c.theta - (1 - math.pi / 16)) < 1e-3
    assert abs(c.sigma - math.pi / 2) < 1e-3
    assert c.polygon_tolerance < 1e-3


def test_no_hole_cell():
    c = build_cell(2, None)
    assert (c.theta, c.sigma) == (1.0, 0.0)


def test_hole_touching_boundary_rejected():
    with pytest.raises(HoleTouchesCellBoundary):
        build_cell(2, {"kind": "rect", "lo": [0.0, 0.25], "hi": [0.75, 0.75]})
    with pytest.raises(HoleTouchesCellBoundary):
        build_cell(2, {"kind": "disk", "center": [0.5, 0.5], "radius": 0.48})


def test_unsupported_dimension():
    with pytest.raises(UnsupportedDim):
        build_cell(4, "square")
    with pytest.raises(UnsupportedDim):
        build_cell(3, "disk")


def test_non_tiling_epsilon(square_cell):
    with pytest.raises(NonTilingEpsilon):
        build_perforated_mesh(square_cell, epsilon=0.3)


def test_mesh_too_coarse(square_cell):
    with pytest.raises(MeshTooCoarse):
        build_perforated_mesh(square_cell, epsilon=0.25, target_h=0.125)


@pytest.mark.parametrize("eps, count", [(0.25, 16), (0.125, 64), (0.0625, 256)])
def test_square_hole_measures_exact(square_cell, eps, count):
    rep = measures(build_perforated_mesh(square_cell, epsilon=eps, target_h=eps / 4))
    assert rep.hole_count == count
    assert abs(rep.omega_eps - 0.75) <= 1e-12
    assert abs(rep.scaled_surf - 2.0) <= 1e-12
    assert abs(rep.bound - 2.75) <= 1e-12


def test_facet_tags_and_orientation(perforated16):
    m = perforated16
    assert set(np.unique(m.facet_tags)) == {OUTER, HOLE}
    assert np.all(m.volumes > 0)
    outer = m.nodes[m.outer_nodes]
    on_box = np.any(np.isclose(outer, 0) | np.isclose(outer, 1), axis=1)
    assert on_box.all()


def test_companion_is_hole_free(perforated16):
    comp = perforated16.companion
    assert abs(comp.volumes.sum() - 1.0) < 1e-12
    assert np.allclose(comp.nodes[perforated16.parent], perforated16.nodes)


def test_periodic_pairing_matches_opposite_faces(square_cell_mesh):
    m = square_cell_mesh
    master = m.periodic_master
    d = m.nodes - m.nodes[master]
    assert np.all(np.isin(np.round(d, 12), [0.0, 1.0]))


def test_disk_perimeter_converges():
    c = build_cell(2, "disk")
    m = build_periodic_cell_mesh(c, 1.0 / 64)
    assert abs(m.hole_facet_measures.sum() - math.pi / 2) / (math.pi / 2) < 1e-3


def test_three_dimensional_cube_hole():
    c = build_cell(3, "cube")
    rep = measures(build_perforated_mesh(c, epsilon=0.5, target_h=0.125))
    assert abs(rep.omega_eps - 0.875) < 1e-12
    assert abs(rep.scaled_surf - 1.5) < 1e-12


def test_domain_mesh_statistics():
    s = mesh_statistics(build_domain_mesh(2, 0.25))
    assert s["n_elements"] == 4 * 16
    assert s["n_hole_facets"] == 0


@settings(max_examples=15, deadline=None)
@given(lo=st.integers(1, 3), width=st.integers(1, 2), m=st.sampled_from([1, 2, 4]))
def test_rect_hole_measures_exact_property(lo, width, m):
    # holes on an eighth-grid; any tiling eps, exact area and perimeter
    a, b = lo / 8, (lo + 2 * width) / 8
    if b > 0.95:
        return
    cell = build_cell(2, RectHole((a, a), (b, b)))
    rep = measures(build_perforated_mesh(cell, epsilon=1.0 / m, target_h=1.0 / (8 * m)))
    assert abs(rep.omega_eps - cell.theta) <= 1e-12
    assert abs(rep.scaled_surf - cell.sigma) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.06, 0.44), st.floats(0, 2 * math.pi))
def test_disk_projection_lands_on_polygon(r, phi):
    hole = DiskHole((0.5, 0.5), r)
    y = np.array([[0.5 + 0.3 * math.cos(phi), 0.5 + 0.3 * math.sin(phi)]])
    q = hole.project(y)
    assert abs(np.hypot(*(q[0] - 0.5)) - r) <= r * (1 - math.cos(math.pi / hole.n_sides)) + 1e-12
