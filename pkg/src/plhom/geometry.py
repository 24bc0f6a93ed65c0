"""Reference cell, periodically perforated domain and structured meshes.

The perforated domain is always the unit square (or cube) tiled by cells of
side ``epsilon = 1/m``; every cell carries one rescaled copy of the hole.
Meshes come from a structured background grid whose spacing divides the
cell size.  In 2D each grid square is split into four triangles around its
centre (criss-cross pattern), which keeps the discrete problem invariant
under the symmetries of the square; in 3D each cube is split into six
tetrahedra.  Elements inside a hole are removed.  Rectangular holes are
aligned with grid lines and therefore meshed exactly; disk holes are
polygonised and the nodes of the hole boundary are projected onto the
polygon.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import itertools
import math
from typing import Optional, Union

import numpy as np

from .errors import HoleTouchesCellBoundary, MeshTooCoarse, NonTilingEpsilon, UnsupportedDim

OUTER = 0
HOLE = 1

MIN_MARGIN = 0.05
_TOL = 1e-12


@dataclass(frozen=True)
class RectHole:
    """Axis-aligned box ``prod(lo_i, hi_i)`` in unit-cell coordinates."""

    lo: tuple
    hi: tuple

    @property
    def dim(self):
        return len(self.lo)

    def volume(self):
        return math.prod(h - l for l, h in zip(self.lo, self.hi))

    def boundary_measure(self):
        sides = [h - l for l, h in zip(self.lo, self.hi)]
        if len(sides) == 2:
            return 2.0 * (sides[0] + sides[1])
        a, b, c = sides
        return 2.0 * (a * b + b * c + a * c)

    def bbox(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def contains(self, y):
        y = np.asarray(y, float)
        lo, hi = self.bbox()
        return np.all((y > lo + _TOL) & (y < hi - _TOL), axis=-1)


@dataclass(frozen=True)
class DiskHole:
    """Regular ``n_sides``-gon inscribed in the circle (center, radius).

    The first vertex sits at angle 0, so for ``n_sides % 4 == 0`` the
    polygon has the full symmetry group of the square.
    """

    center: tuple
    radius: float
    n_sides: int = 256

    @property
    def dim(self):
        return 2

    def volume(self):
        n, r = self.n_sides, self.radius
        return 0.5 * n * r * r * math.sin(2.0 * math.pi / n)

    def boundary_measure(self):
        n, r = self.n_sides, self.radius
        return 2.0 * n * r * math.sin(math.pi / n)

    def bbox(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    def _radial(self, y):
        d = np.asarray(y, float) - np.asarray(self.center, float)
        rho = np.hypot(d[..., 0], d[..., 1])
        phi = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2.0 * math.pi)
        step = 2.0 * math.pi / self.n_sides
        mid = (np.floor(phi / step) + 0.5) * step
        r_poly = self.radius * math.cos(step / 2.0) / np.cos(phi - mid)
        return rho, phi, r_poly

    def contains(self, y):
        rho, _, r_poly = self._radial(y)
        return rho < r_poly - _TOL

    def project(self, y):
        """Radial projection of points onto the polygon boundary."""
        _, phi, r_poly = self._radial(y)
        c = np.asarray(self.center, float)
        return c + np.stack([r_poly * np.cos(phi), r_poly * np.sin(phi)], axis=-1)


HoleShape = Union[RectHole, DiskHole]


@dataclass(frozen=True)
class CellGeometry:
    """Unit cell ``Y = [0, 1]^dim`` with one hole (or none)."""

    dim: int
    hole: Optional[HoleShape]
    volume_fraction: float
    surface_density: float
    # |polygon - disk| for area and perimeter; zero for rectangles
    polygon_tolerance: float = 0.0

    @property
    def theta(self):
        return self.volume_fraction

    @property
    def sigma(self):
        return self.surface_density

    def describe(self):
        hole = self.hole
        if hole is None:
            spec = {"kind": "none"}
        elif isinstance(hole, RectHole):
            spec = {"kind": "rect", "lo": list(hole.lo), "hi": list(hole.hi)}
        else:
            spec = {"kind": "disk", "center": list(hole.center), "radius": hole.radius,
                    "n_sides": hole.n_sides}
        return {"dim": self.dim, "hole": spec, "theta": self.volume_fraction,
                "sigma": self.surface_density, "polygon_tolerance": self.polygon_tolerance}


HOLE_PRESETS = {
    "square": lambda: RectHole((0.25, 0.25), (0.75, 0.75)),
    "rect": lambda: RectHole((0.25, 0.375), (0.75, 0.625)),
    "disk": lambda: DiskHole((0.5, 0.5), 0.25),
    "none": lambda: None,
}


def hole_from_spec(spec, dim=2):
    """Turn a preset name, a dict or a hole object into a hole shape."""
    if spec is None or isinstance(spec, (RectHole, DiskHole)):
        return spec
    if isinstance(spec, str):
        if spec == "cube" or (spec == "square" and dim == 3):
            return RectHole((0.25,) * dim, (0.75,) * dim)
        try:
            return HOLE_PRESETS[spec]()
        except KeyError:
            raise ValueError(f"unknown hole preset {spec!r}") from None
    kind = spec.get("kind", "rect")
    if kind == "none":
        return None
    if kind == "rect":
        return RectHole(tuple(map(float, spec["lo"])), tuple(map(float, spec["hi"])))
    if kind == "disk":
        return DiskHole(tuple(map(float, spec["center"])), float(spec["radius"]),
                        int(spec.get("n_sides", 256)))
    raise ValueError(f"unknown hole kind {kind!r}")


def build_cell(dim, hole_spec, margin=MIN_MARGIN):
    """Build the unit cell and its exact measures.

    ``hole_spec`` may be ``None`` (no hole), a preset name (``"square"``,
    ``"rect"``, ``"disk"``), a dict, or a :class:`RectHole`/:class:`DiskHole`.
    """
    if dim not in (2, 3):
        raise UnsupportedDim(f"dimension {dim} not supported (2 or 3)")
    hole = hole_from_spec(hole_spec, dim)
    if hole is None:
        return CellGeometry(dim, None, 1.0, 0.0)
    if hole.dim != dim:
        raise UnsupportedDim(f"hole of dimension {hole.dim} in a {dim}D cell")
    if dim == 3 and not isinstance(hole, RectHole):
        raise UnsupportedDim("3D cells support rectangular holes only")
    lo, hi = hole.bbox()
    if np.any(hi <= lo):
        raise ValueError("hole has empty interior")
    if np.any(lo < margin - _TOL) or np.any(hi > 1.0 - margin + _TOL):
        raise HoleTouchesCellBoundary(
            f"hole bounding box [{lo}, {hi}] is closer than {margin} to the cell boundary")
    tol = 0.0
    if isinstance(hole, DiskHole):
        r = hole.radius
        tol = max(abs(math.pi * r * r - hole.volume()), abs(2 * math.pi * r - hole.boundary_measure()))
    return CellGeometry(dim, hole, 1.0 - hole.volume(), hole.boundary_measure(), tol)


@dataclass(frozen=True, eq=False)
class PerforatedMesh:
    """Conforming simplex mesh of a (possibly perforated) box ``[0, L]^dim``.

    ``keys`` are integer lattice coordinates of the nodes in units of
    ``key_unit`` (before any projection onto curved hole boundaries); they
    identify nodes across nested meshes.  ``parent`` indexes the nodes of
    ``companion``, the hole-free mesh of the same box on the same grid.
    ``periodic_master`` maps every node to its representative under the
    identification of opposite faces (periodic cell meshes only).
    """

    nodes: np.ndarray
    elements: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    epsilon: float
    hole_index: np.ndarray
    cell: CellGeometry
    keys: np.ndarray
    key_unit: float
    grid_h: float
    hole_count: int
    length: float = 1.0
    periodic_master: Optional[np.ndarray] = None
    parent: Optional[np.ndarray] = None
    companion: Optional["PerforatedMesh"] = None

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @cached_property
    def volumes(self):
        return _simplex_volumes(self.nodes, self.elements)

    @cached_property
    def barycentric_gradients(self):
        """Gradients of the P1 basis functions, shape ``(n_el, dim + 1, dim)``."""
        X = self.nodes[self.elements]
        T = np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))
        Tinv = np.linalg.inv(T)
        g = np.empty((len(self.elements), self.dim + 1, self.dim))
        g[:, 1:, :] = Tinv
        g[:, 0, :] = -Tinv.sum(axis=1)
        return g

    @cached_property
    def hole_facets(self):
        return self.facets[self.facet_tags == HOLE]

    @cached_property
    def hole_facet_measures(self):
        return _facet_measures(self.nodes, self.hole_facets)

    @cached_property
    def outer_nodes(self):
        mask = np.zeros(self.n_nodes, bool)
        mask[self.facets[self.facet_tags == OUTER].ravel()] = True
        return mask

    @cached_property
    def hole_nodes(self):
        return np.unique(self.hole_facets.ravel())

    def node_lookup(self):
        """Dict from lattice key tuples to node indices."""
        return {tuple(k): i for i, k in enumerate(self.keys.tolist())}


def _simplex_volumes(nodes, elements):
    X = nodes[elements]
    T = X[:, 1:, :] - X[:, :1, :]
    d = nodes.shape[1]
    return np.abs(np.linalg.det(T)) / math.factorial(d)


def _signed_volumes(nodes, elements):
    X = nodes[elements]
    T = X[:, 1:, :] - X[:, :1, :]
    return np.linalg.det(T) / math.factorial(nodes.shape[1])


def _facet_measures(nodes, facets):
    if len(facets) == 0:
        return np.zeros(0)
    X = nodes[facets]
    E = X[:, 1:, :] - X[:, :1, :]
    gram = np.einsum("fid,fjd->fij", E, E)
    k = facets.shape[1] - 1
    return np.sqrt(np.abs(np.linalg.det(gram))) / math.factorial(k)


def _crisscross_grid(n, h):
    """Criss-cross triangulation of ``[0, n h]^2``; keys in units of h/2."""
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    ci, cj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keys = np.vstack([
        np.stack([2 * i.ravel(), 2 * j.ravel()], axis=1),
        np.stack([2 * ci.ravel() + 1, 2 * cj.ravel() + 1], axis=1),
    ])

    def corner(a, b):
        return a * (n + 1) + b

    c00 = corner(ci, cj).ravel()
    c10 = corner(ci + 1, cj).ravel()
    c11 = corner(ci + 1, cj + 1).ravel()
    c01 = corner(ci, cj + 1).ravel()
    m = ((n + 1) ** 2 + ci * n + cj).ravel()
    tri = np.stack([
        np.stack([c00, c10, m], axis=1),
        np.stack([c10, c11, m], axis=1),
        np.stack([c11, c01, m], axis=1),
        np.stack([c01, c00, m], axis=1),
    ], axis=1).reshape(-1, 3)
    return keys * (h / 2.0), keys, tri, h / 2.0


def _kuhn_grid(n, h):
    """Six-tetrahedra-per-cube triangulation of ``[0, n h]^3``; keys in units of h."""
    idx = np.arange(n + 1)
    I, J, K = np.meshgrid(idx, idx, idx, indexing="ij")
    keys = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)

    def node(a, b, c):
        return (a * (n + 1) + b) * (n + 1) + c

    ci, cj, ck = (a.ravel() for a in np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"))
    tets = []
    for perm in itertools.permutations(range(3)):
        base = np.stack([ci, cj, ck], axis=1)
        verts = [node(*base.T)]
        cur = base.copy()
        for ax in perm:
            cur = cur.copy()
            cur[:, ax] += 1
            verts.append(node(*cur.T))
        tets.append(np.stack(verts, axis=1))
    tets = np.stack(tets, axis=1).reshape(-1, 4)
    nodes = keys * float(h)
    vol = _signed_volumes(nodes, tets)
    neg = vol < 0
    tets[neg, 0], tets[neg, 1] = tets[neg, 1].copy(), tets[neg, 0].copy()
    return nodes, keys, tets, float(h)


def _background(dim, n, h):
    if dim == 2:
        return _crisscross_grid(n, h)
    return _kuhn_grid(n, h)


def _boundary_facets(elements):
    d1 = elements.shape[1]
    faces = np.concatenate([np.delete(elements, k, axis=1) for k in range(d1)])
    srt = np.sort(faces, axis=1)
    _, first, counts = np.unique(srt, axis=0, return_index=True, return_counts=True)
    once = np.sort(first[counts == 1])
    return srt[once]


def _tag_facets(facets, keys, kmax):
    fk = keys[facets]  # (nf, d, dim)
    on_face = np.any(np.all(fk == 0, axis=1) | np.all(fk == kmax, axis=1), axis=1)
    return np.where(on_face, OUTER, HOLE).astype(np.int8)


def _cells_per_side(cell, n_min):
    """Smallest grid resolution per cell that is even, >= n_min, and resolves the hole."""
    hole = cell.hole
    n0 = max(2, int(n_min))
    n0 += n0 % 2
    if hole is None or isinstance(hole, DiskHole):
        return n0
    coords = np.concatenate([hole.lo, hole.hi])
    for n in range(n0, 64 * n0 + 1, 2):
        scaled = coords * n
        if np.all(np.abs(scaled - np.round(scaled)) < 1e-9):
            return n
    raise MeshTooCoarse("rectangular hole corners cannot be aligned with a structured grid")


def _local(points, eps):
    k = np.floor(points / eps + 1e-12).astype(int)
    return k, points / eps - k


def _mesh_box(cell, m, n_cell, periodic):
    """Mesh ``[0, 1]^dim`` tiled by ``m`` cells per side, ``n_cell`` grid steps per cell."""
    dim = cell.dim
    eps = 1.0 / m
    n = m * n_cell
    h = 1.0 / n
    nodes, keys, elements, unit = _background(dim, n, h)
    kmax = keys.max(axis=0)
    hole = cell.hole
    keep = np.ones(len(elements), bool)
    hole_count = 0
    if hole is not None:
        cent = nodes[elements].mean(axis=1)
        kc, yc = _local(cent, eps)
        inside = hole.contains(yc)
        if isinstance(hole, DiskHole):
            yv = nodes[elements] / eps - kc[:, None, :]
            inside |= np.any(hole.contains(yv), axis=1)
        keep = ~inside
        hole_count = len(np.unique(kc[inside], axis=0)) if inside.any() else 0

    coords = nodes.copy()
    if isinstance(hole, DiskHole):
        # drop remaining elements that would be flattened onto the hole boundary
        while True:
            facets = _boundary_facets(elements[keep])
            tags = _tag_facets(facets, keys, kmax)
            hb = np.zeros(len(nodes), bool)
            hb[facets[tags == HOLE].ravel()] = True
            bad = keep & np.all(hb[elements], axis=1)
            if not bad.any():
                break
            keep &= ~bad
        idx = np.flatnonzero(hb)
        k, y = _local(nodes[idx], eps)
        coords[idx] = (k + hole.project(y)) * eps
        vol = _signed_volumes(coords, elements[keep])
        ref = (h ** dim) / (2 * dim)
        if vol.min() <= 1e-3 * ref:
            raise MeshTooCoarse("grid too coarse to resolve the disk hole")

    kept = elements[keep]
    used = np.unique(kept.ravel())
    renum = -np.ones(len(nodes), int)
    renum[used] = np.arange(len(used))
    elems = renum[kept]
    sub_keys = keys[used]
    facets = _boundary_facets(elems)
    tags = _tag_facets(facets, sub_keys, kmax)
    sub_nodes = coords[used]
    hole_facets = facets[tags == HOLE]
    if len(hole_facets):
        hole_index, _ = _local(sub_nodes[hole_facets].mean(axis=1), eps)
    else:
        hole_index = np.zeros((0, dim), int)

    master = None
    if periodic:
        master = _periodic_pairing(sub_keys, kmax)

    companion = None
    if hole is not None:
        companion = _freeze(PerforatedMesh(
            nodes=coords, elements=elements, facets=_boundary_facets(elements),
            facet_tags=None, epsilon=eps, hole_index=np.zeros((0, dim), int),
            cell=build_cell(dim, None), keys=keys, key_unit=unit, grid_h=h, hole_count=0,
        ), kmax)
    mesh = PerforatedMesh(
        nodes=sub_nodes, elements=elems, facets=facets, facet_tags=tags, epsilon=eps,
        hole_index=hole_index, cell=cell, keys=sub_keys, key_unit=unit, grid_h=h,
        hole_count=hole_count, periodic_master=master,
        parent=used if hole is not None else None, companion=companion,
    )
    return _freeze(mesh, kmax)


def _freeze(mesh, kmax):
    if mesh.facet_tags is None:
        object.__setattr__(mesh, "facet_tags", _tag_facets(mesh.facets, mesh.keys, kmax))
    for name in ("nodes", "elements", "facets", "facet_tags", "hole_index", "keys",
                 "periodic_master", "parent"):
        arr = getattr(mesh, name)
        if arr is not None:
            arr.setflags(write=False)
    return mesh


def _periodic_pairing(keys, kmax):
    master_keys = np.where(keys == kmax, 0, keys)
    base = int(kmax.max()) + 1

    def encode(k):
        return np.ravel_multi_index(k.T, (base,) * k.shape[1])

    code = encode(keys)
    order = np.argsort(code)
    pos = np.searchsorted(code[order], encode(master_keys))
    master = order[np.clip(pos, 0, len(order) - 1)]
    if not np.array_equal(keys[master], master_keys):
        raise MeshTooCoarse("opposite cell faces do not carry matching nodes")
    return master


def _check_epsilon(epsilon):
    if not (0.0 < epsilon <= 1.0):
        raise NonTilingEpsilon(f"epsilon={epsilon} outside (0, 1]")
    m = round(1.0 / epsilon)
    if abs(m * epsilon - 1.0) > 1e-12:
        raise NonTilingEpsilon(f"1/epsilon = {1.0 / epsilon} is not an integer")
    return m


def build_perforated_mesh(cell, domain="unit", epsilon=0.25, target_h=None):
    """Mesh ``Omega_eps = (0,1)^dim`` minus all holes ``eps*k + eps*F``.

    The grid step is the largest ``eps/n`` not above ``target_h`` (default
    ``eps/8``) that resolves the hole; ``mesh.companion`` is the hole-free
    mesh on the same grid.
    """
    if domain not in ("unit", "unit_square", "unit_cube", None):
        raise ValueError("only the unit square/cube is supported as Omega")
    m = _check_epsilon(epsilon)
    eps = 1.0 / m
    if target_h is None:
        target_h = eps / 8.0
    if target_h > eps / 4.0 * (1.0 + 1e-12):
        raise MeshTooCoarse(f"target_h={target_h} exceeds epsilon/4={eps / 4}")
    n_cell = _cells_per_side(cell, math.ceil(eps / target_h - 1e-9))
    return _mesh_box(cell, m, n_cell, periodic=False)


def build_domain_mesh(dim=2, h=1.0 / 64):
    """Hole-free mesh of the unit square/cube with grid step ``h``."""
    n = round(1.0 / h)
    if abs(n * h - 1.0) > 1e-12:
        raise NonTilingEpsilon(f"1/h = {1.0 / h} is not an integer")
    return _mesh_box(build_cell(dim, None), 1, n, periodic=False)


def build_periodic_cell_mesh(cell, target_h=1.0 / 32):
    """Mesh of the perforated unit cell with periodic node pairing."""
    n_cell = _cells_per_side(cell, math.ceil(1.0 / target_h - 1e-9))
    if cell.hole is not None:
        lo, hi = cell.hole.bbox()
        if np.any(np.minimum(lo, 1.0 - hi) * n_cell < 1.0 - 1e-9) or np.any((hi - lo) * n_cell < 1.0 - 1e-9):
            raise MeshTooCoarse("grid step larger than the hole or its margin")
    return _mesh_box(cell, 1, n_cell, periodic=True)


@dataclass(frozen=True)
class MeasureReport:
    omega_eps: float
    surf_eps: float
    scaled_surf: float
    hole_count: int

    @property
    def bound(self):
        return self.omega_eps + self.scaled_surf


def measures(mesh):
    """Exact (compensated) sums of element volumes and hole-facet measures."""
    omega = math.fsum(mesh.volumes)
    surf = math.fsum(mesh.hole_facet_measures)
    return MeasureReport(omega, surf, mesh.epsilon * surf, mesh.hole_count)


def mesh_statistics(mesh):
    return {
        "n_nodes": int(mesh.n_nodes),
        "n_elements": int(len(mesh.elements)),
        "n_outer_facets": int(np.sum(mesh.facet_tags == OUTER)),
        "n_hole_facets": int(np.sum(mesh.facet_tags == HOLE)),
        "grid_h": mesh.grid_h,
        "epsilon": mesh.epsilon,
        "hole_count": int(mesh.hole_count),
    }
