"""Periodic p-Laplace cell problem and the effective flux ``b``.

For a mean gradient ``zeta`` the cell solution is ``w = zeta . y + v`` with
``v`` periodic on the perforated cell, and

    b(zeta) = (1/|Y|) * integral over Y* of |grad w|^(p-2) grad w.

Periodicity is imposed by node identification; the additive constant in
``v`` is fixed by pinning one node during the solve and shifting ``v`` to
zero mean afterwards.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import csv
import io
import itertools
import json
import math
import os

import numpy as np

from .errors import NewtonDiverged, NotLinearRegime
from .geometry import DiskHole, RectHole
from .pde_core import NewtonReport, PLaplaceFlux, _coo, _fix_rows, _scatter, newton_solve


class CellSystem:
    """Reduced (periodic) nonlinear system of the cell problem."""

    def __init__(self, mesh, flux, zeta):
        if mesh.periodic_master is None:
            raise ValueError("cell problem needs a periodic cell mesh")
        self.mesh = mesh
        self.flux = flux
        self.zeta = np.asarray(zeta, float)
        masters, self.red = np.unique(mesh.periodic_master, return_inverse=True)
        self.n_red = len(masters)
        self.fixed = np.zeros(self.n_red, bool)
        self.fixed[0] = True
        self.affine = False

    def expand(self, v_red):
        return v_red[self.red]

    def total_gradients(self, v_red):
        m = self.mesh
        v = self.expand(v_red)
        return self.zeta + np.einsum("ei,eid->ed", v[m.elements], m.barycentric_gradients)

    def weak_residual(self, v_red):
        m = self.mesh
        F = self.flux(self.total_gradients(v_red))
        local = m.volumes[:, None] * np.einsum("eid,ed->ei", m.barycentric_gradients, F)
        r = _scatter(m.elements, local, m.n_nodes)
        return np.bincount(self.red, weights=r, minlength=self.n_red)

    def residual(self, v_red):
        r = self.weak_residual(v_red)
        r[self.fixed] = v_red[self.fixed]
        return r

    def jacobian(self, v_red):
        m = self.mesh
        grads = m.barycentric_gradients
        D = self.flux.derivative(self.total_gradients(v_red))
        blocks = m.volumes[:, None, None] * np.einsum("eia,eab,ejb->eij", grads, D, grads)
        J = _coo(self.red[m.elements], blocks, self.n_red)
        return _fix_rows(J, self.fixed)


@dataclass
class CellSolution:
    zeta: np.ndarray
    corrector: np.ndarray
    flux_avg: np.ndarray
    residual_norm: float
    report: NewtonReport
    nodes: np.ndarray = field(repr=False, default=None)

    @property
    def w(self):
        return self.nodes @ self.zeta + self.corrector


def solve_cell(cell_mesh, p, zeta, tol=1e-12, delta=1e-8, max_iter=60, initial=None):
    """Solve the cell problem for ``zeta``.

    ``tol`` is relative: Newton stops once the reduced residual is below
    ``tol * |zeta|^(p-1)``, the natural scale of the flux.
    """
    zeta = np.asarray(zeta, float)
    m = cell_mesh
    n = len(np.unique(m.periodic_master))
    scale = float(np.linalg.norm(zeta)) ** (p - 1.0)
    if scale == 0.0:
        rep = NewtonReport(0, 0.0, True, [])
        return CellSolution(zeta, np.zeros(m.n_nodes), np.zeros(m.dim), 0.0, rep, m.nodes)
    system = CellSystem(m, PLaplaceFlux(p, delta), zeta)
    v0 = np.zeros(n) if initial is None else np.asarray(initial, float)
    v_red, rep = newton_solve(system, v0, tol * scale, max_iter)
    v = system.expand(v_red)
    vol = m.volumes
    mean = float(vol @ v[m.elements].mean(axis=1)) / float(vol.sum())
    v = v - mean
    F = system.flux(system.total_gradients(v_red))
    b = vol @ F  # |Y| = 1
    res = float(np.linalg.norm(system.weak_residual(v_red)[~system.fixed]))
    return CellSolution(zeta, v, b, res, rep, m.nodes)


def effective_flux(cell_mesh, p, zeta, tol=1e-12, delta=1e-8):
    return solve_cell(cell_mesh, p, zeta, tol, delta).flux_avg


def _workers():
    try:
        return max(1, int(os.environ.get("PLHOM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class EffectiveFluxTable:
    """Effective flux on a uniform grid of unit directions in 2D.

    Between two stored directions ``e_j``, ``e_{j+1}`` a unit vector is
    written as ``e = a e_j + c e_{j+1}`` with ``a, c >= 0`` and the table
    returns ``a b_j + c b_{j+1}``; larger vectors are scaled by
    ``|zeta|^(p-1)``.  The interpolation is exact whenever ``b`` is linear,
    so a p = 2 table reproduces the effective tensor.
    """

    p: float
    angles: np.ndarray
    values: np.ndarray
    interpolation_error: float = None
    metadata: dict = field(default_factory=dict)

    @property
    def directions(self):
        return np.stack([np.cos(self.angles), np.sin(self.angles)], axis=1)

    def evaluate(self, Z):
        Z = np.atleast_2d(np.asarray(Z, float))
        n = len(self.angles)
        step = 2.0 * math.pi / n
        r = np.hypot(Z[:, 0], Z[:, 1])
        phi = np.mod(np.arctan2(Z[:, 1], Z[:, 0]), 2.0 * math.pi)
        j = np.minimum(np.floor(phi / step).astype(int), n - 1)
        t = phi - j * step
        a = np.sin(step - t) / math.sin(step)
        c = np.sin(t) / math.sin(step)
        B = a[:, None] * self.values[j] + c[:, None] * self.values[(j + 1) % n]
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, r ** (self.p - 1.0), 0.0)
        return scale[:, None] * B

    def __call__(self, zeta):
        zeta = np.asarray(zeta, float)
        out = self.evaluate(zeta.reshape(-1, 2))
        return out[0] if zeta.ndim == 1 else out

    def monotonicity_violation(self, n_pairs=100, radius=2.0, seed=0):
        """Most negative ``(b(z1)-b(z2)).(z1-z2)`` over random pairs (0 if none)."""
        rng = np.random.default_rng(seed)
        z1 = _random_disk(rng, n_pairs, radius)
        z2 = _random_disk(rng, n_pairs, radius)
        d = np.einsum("nd,nd->n", self.evaluate(z1) - self.evaluate(z2), z1 - z2)
        return float(min(0.0, d.min()))

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# effective flux table p={self.p:g} n_directions={len(self.angles)}\n")
        if "manifest" in self.metadata:
            buf.write(f"# manifest: {self.metadata['manifest']}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["angle", "b1", "b2"])
        for a, (b1, b2) in zip(self.angles, self.values):
            w.writerow([repr(float(a)), repr(float(b1)), repr(float(b2))])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"p": self.p, "angles": self.angles.tolist(), "values": self.values.tolist(),
                           "interpolation_error": self.interpolation_error,
                           "metadata": self.metadata}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(float(d["p"]), np.asarray(d["angles"], float), np.asarray(d["values"], float),
                   d.get("interpolation_error"), d.get("metadata", {}))


def _random_disk(rng, n, radius):
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    a = rng.uniform(0, 2 * math.pi, n)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


def _solve_directions(cell_mesh, p, angles, tol, delta):
    def one(k):
        e = np.array([math.cos(angles[k]), math.sin(angles[k])])
        try:
            return solve_cell(cell_mesh, p, e, tol, delta).flux_avg
        except NewtonDiverged as exc:
            raise NewtonDiverged(f"cell problem diverged for direction {k} "
                                 f"(angle {angles[k]:.6f}): {exc}", exc.report) from exc

    workers = _workers()
    if workers == 1:
        return np.array([one(k) for k in range(len(angles))])
    with ThreadPoolExecutor(workers) as pool:
        return np.array(list(pool.map(one, range(len(angles)))))


def build_flux_table(cell_mesh, p, n_directions=32, tol=1e-12, delta=1e-8, estimate_error=True):
    """Tabulate ``b`` on ``n_directions`` uniformly spaced unit vectors.

    With ``estimate_error`` the mid-angle directions are solved as well and
    the largest interpolation error there, relative to ``max |b_j|``, is
    stored in ``interpolation_error``.
    """
    if cell_mesh.dim != 2:
        raise ValueError("flux tables are two-dimensional only")
    if n_directions < 8:
        raise ValueError("at least 8 directions are required")
    angles = 2.0 * math.pi * np.arange(n_directions) / n_directions
    values = _solve_directions(cell_mesh, p, angles, tol, delta)
    table = EffectiveFluxTable(float(p), angles, values, None, {
        "grid_h": cell_mesh.grid_h, "tol": tol, "delta": delta,
        "cell": cell_mesh.cell.describe()})
    if estimate_error:
        mid = angles + math.pi / n_directions
        exact = _solve_directions(cell_mesh, p, mid, tol, delta)
        approx = table.evaluate(np.stack([np.cos(mid), np.sin(mid)], axis=1))
        table.interpolation_error = float(np.max(np.linalg.norm(approx - exact, axis=1))
                                          / np.max(np.linalg.norm(values, axis=1)))
    return table


def effective_tensor_p2(cell_mesh, tol=1e-12, p=2.0, delta=1e-8):
    """Homogenised diffusion matrix ``A e_i = b(e_i)`` of the linear regime."""
    if p != 2.0:
        raise NotLinearRegime(f"effective tensor only exists for p = 2 (got p = {p})")
    d = cell_mesh.dim
    cols = [solve_cell(cell_mesh, 2.0, np.eye(d)[i], tol, delta).flux_avg for i in range(d)]
    return np.stack(cols, axis=1)


def hole_symmetries(cell):
    """Signed permutation matrices (about the cell centre) mapping the hole onto itself."""
    d = cell.dim
    hole = cell.hole
    mats = []
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1.0, -1.0), repeat=d):
            R = np.zeros((d, d))
            R[np.arange(d), perm] = signs
            if hole is None:
                mats.append(R)
            elif isinstance(hole, RectHole):
                lo, hi = hole.bbox()
                corners = np.array(list(itertools.product(*zip(lo, hi)))) - 0.5
                mapped = corners @ R.T
                if np.allclose(mapped.min(axis=0), lo - 0.5) and np.allclose(mapped.max(axis=0), hi - 0.5):
                    mats.append(R)
            elif isinstance(hole, DiskHole):
                if np.allclose(hole.center, 0.5) and hole.n_sides % 4 == 0:
                    mats.append(R)
    return mats
