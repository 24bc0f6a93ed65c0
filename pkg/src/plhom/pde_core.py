"""P1 finite element numerics shared by the micro, macro and cell solvers.

The discrete operator of one implicit Euler step is

    H (u - u_prev) / dt + A(u) = 0,

with ``H = c_m M + c_s S`` (bulk and hole-boundary mass matrices) and the
stationary part ``A`` collecting the diffusion flux, the bulk reactions and
the hole-boundary reaction.  Nodes flagged as fixed (the outer boundary)
carry the row ``u_i = 0``.  All reductions into global vectors/matrices go
through ``np.bincount`` or COO summation in element order, so repeated runs
are bitwise reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, LinearSolveFailed, NewtonDiverged, SingularRegularization
from .quadrature import simplex_rule


@dataclass
class FieldState:
    """Nodal bulk field at one time level; the trace is read from the bulk."""

    time: float
    bulk: np.ndarray
    hole_nodes: np.ndarray

    @property
    def trace(self):
        return self.bulk[self.hole_nodes]


# ---------------------------------------------------------------- fluxes

class PLaplaceFlux:
    """Regularised p-Laplace flux ``(delta^2 + |z|^2)^((p-2)/2) z``."""

    def __init__(self, p, delta=1e-8):
        self.p = float(p)
        self.delta = float(delta)

    @property
    def linear(self):
        return self.p == 2.0

    def _s(self, G):
        return self.delta ** 2 + np.einsum("ed,ed->e", G, G)

    def __call__(self, G):
        if self.linear:
            return np.array(G, float)
        return self._s(G)[:, None] ** ((self.p - 2.0) / 2.0) * G

    def derivative(self, G):
        d = G.shape[1]
        if self.linear:
            return np.broadcast_to(np.eye(d), (G.shape[0], d, d))
        s = self._s(G)
        if self.p > 2.0 and self.delta == 0.0 and np.any(s == 0.0):
            raise SingularRegularization("p > 2 with delta = 0 and a zero gradient")
        with np.errstate(divide="ignore", invalid="ignore"):
            a = s ** ((self.p - 2.0) / 2.0)
            c = (self.p - 2.0) * s ** ((self.p - 4.0) / 2.0)
        c = np.where(s > 0, c, 0.0)
        return a[:, None, None] * np.eye(d) + c[:, None, None] * np.einsum("ea,eb->eab", G, G)

    def describe(self):
        return {"kind": "p-laplace", "p": self.p, "delta": self.delta}


class LinearFlux:
    """Constant-coefficient linear flux ``A z``."""

    linear = True

    def __init__(self, A):
        self.A = np.asarray(A, float)

    def __call__(self, G):
        return G @ self.A.T

    def derivative(self, G):
        n, d = G.shape
        return np.broadcast_to(self.A, (n, d, d))

    def describe(self):
        return {"kind": "linear", "A": self.A.tolist()}


class TabulatedFlux:
    """Flux evaluated from an effective flux table; Jacobian by central differences."""

    linear = False

    def __init__(self, table, rel_step=1e-6):
        self.table = table
        self.rel_step = rel_step

    def __call__(self, G):
        return self.table.evaluate(G)

    def derivative(self, G):
        n, d = G.shape
        h = self.rel_step * np.maximum(1.0, np.linalg.norm(G, axis=1))
        D = np.empty((n, d, d))
        for j in range(d):
            E = np.zeros_like(G)
            E[:, j] = h
            D[:, :, j] = (self.table.evaluate(G + E) - self.table.evaluate(G - E)) / (2.0 * h[:, None])
        return D

    def describe(self):
        return {"kind": "table", "p": self.table.p, "n_directions": len(self.table.angles)}


# ---------------------------------------------------------------- assembly helpers

def _scatter(elements, local, n):
    return np.bincount(elements.ravel(), weights=local.ravel(), minlength=n)


def _coo(elements, blocks, n):
    k = elements.shape[1]
    rows = np.repeat(elements, k, axis=1).ravel()
    cols = np.tile(elements, (1, k)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def mass_blocks(measures, k):
    """Exact P1 mass blocks on simplices with ``k`` vertices."""
    base = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    return measures[:, None, None] * base


def gradients(mesh, u):
    return np.einsum("ei,eid->ed", u[mesh.elements], mesh.barycentric_gradients)


def default_quad_degree(p, *nls):
    deg = max([2, math.ceil(2 * (p - 1) + 1)] + [nl.degree + 1 for nl in nls])
    return int(deg)


@dataclass(eq=False)
class ParabolicOperator:
    """Implicit Euler operator of a reaction-diffusion problem on a mesh.

    Coefficients select the micro problem (``mass_coef = 1``, surface terms
    weighted by ``epsilon``) or the homogenised problem (``mass_coef =
    theta + sigma``, bulk reactions weighted by ``theta`` and ``sigma``).
    """

    mesh: object
    flux: object
    p: float
    kappa: float
    f: object
    g: object
    mass_coef: float = 1.0
    surface_coef: float = 0.0
    reaction_coef: float = 1.0
    bulk_g_coef: float = 0.0
    surface_g_coef: float = 0.0
    quad_degree: int = None

    def __post_init__(self):
        if self.quad_degree is None:
            self.quad_degree = default_quad_degree(self.p, self.f, self.g)

    @cached_property
    def fixed(self):
        return np.asarray(self.mesh.outer_nodes)

    @cached_property
    def _rule(self):
        return simplex_rule(self.mesh.dim, self.quad_degree)

    @cached_property
    def _facet_rule(self):
        return simplex_rule(self.mesh.dim - 1, self.quad_degree)

    @cached_property
    def mass_matrix(self):
        m = self.mesh
        return _coo(m.elements, mass_blocks(m.volumes, m.dim + 1), m.n_nodes)

    @cached_property
    def surface_mass_matrix(self):
        m = self.mesh
        return _coo(m.hole_facets, mass_blocks(m.hole_facet_measures, m.dim), m.n_nodes)

    @cached_property
    def h_matrix(self):
        H = self.mass_coef * self.mass_matrix
        if self.surface_coef:
            H = H + self.surface_coef * self.surface_mass_matrix
        return H.tocsr()

    @property
    def affine(self):
        return (self.flux.linear and self.f.is_affine and self.g.is_affine
                and (self.p == 2.0 or self.kappa == 0.0))

    @property
    def has_surface(self):
        return len(self.mesh.hole_facets) > 0 and (self.surface_coef or self.surface_g_coef)

    def _reaction(self, U):
        pw = np.abs(U) ** (self.p - 2.0) if self.p != 2.0 else 1.0
        z = self.reaction_coef * (self.kappa * pw * U + self.f.value(U))
        if self.bulk_g_coef:
            z = z + self.bulk_g_coef * self.g.value(U)
        return z

    def _reaction_prime(self, U):
        pw = np.abs(U) ** (self.p - 2.0) if self.p != 2.0 else 1.0
        z = self.reaction_coef * (self.kappa * (self.p - 1.0) * pw + self.f.derivative(U))
        if self.bulk_g_coef:
            z = z + self.bulk_g_coef * self.g.derivative(U)
        return z

    def _check(self, u):
        if u.shape != (self.mesh.n_nodes,):
            raise DimensionMismatch(f"field of shape {u.shape} on a mesh with {self.mesh.n_nodes} nodes")

    def stationary_residual(self, u):
        """Vector of ``A(u)`` tested with every nodal basis function."""
        u = np.asarray(u, float)
        self._check(u)
        m = self.mesh
        grads = m.barycentric_gradients
        F = self.flux(gradients(m, u))
        local = m.volumes[:, None] * np.einsum("eid,ed->ei", grads, F)
        lam, w = self._rule
        U = u[m.elements] @ lam.T
        local += m.volumes[:, None] * ((self._reaction(U) * w) @ lam)
        r = _scatter(m.elements, local, m.n_nodes)
        if self.has_surface and self.surface_g_coef:
            lf, wf = self._facet_rule
            hf = m.hole_facets
            Us = u[hf] @ lf.T
            loc = m.hole_facet_measures[:, None] * ((self.surface_g_coef * self.g.value(Us) * wf) @ lf)
            r += _scatter(hf, loc, m.n_nodes)
        return r

    def stationary_jacobian(self, u):
        u = np.asarray(u, float)
        self._check(u)
        m = self.mesh
        grads = m.barycentric_gradients
        D = self.flux.derivative(gradients(m, u))
        blocks = m.volumes[:, None, None] * np.einsum("eia,eab,ejb->eij", grads, D, grads)
        lam, w = self._rule
        U = u[m.elements] @ lam.T
        blocks += m.volumes[:, None, None] * np.einsum(
            "eq,qi,qj->eij", self._reaction_prime(U) * w, lam, lam)
        J = _coo(m.elements, blocks, m.n_nodes)
        if self.has_surface and self.surface_g_coef:
            lf, wf = self._facet_rule
            hf = m.hole_facets
            Us = u[hf] @ lf.T
            fb = m.hole_facet_measures[:, None, None] * np.einsum(
                "fq,qi,qj->fij", self.surface_g_coef * self.g.derivative(Us) * wf, lf, lf)
            J = J + _coo(hf, fb, m.n_nodes)
        return J

    def dissipation(self, u):
        """``<A(u), u>``: the discrete counterpart of the dissipation terms."""
        u = np.asarray(u, float)
        return float(self.stationary_residual(u) @ u)

    def h_norm_sq(self, u):
        return float(u @ (self.h_matrix @ u))

    def describe(self):
        return {"flux": self.flux.describe(), "p": self.p, "kappa": self.kappa,
                "f": self.f.describe(), "g": self.g.describe(), "mass_coef": self.mass_coef,
                "surface_coef": self.surface_coef, "reaction_coef": self.reaction_coef,
                "bulk_g_coef": self.bulk_g_coef, "surface_g_coef": self.surface_g_coef,
                "quad_degree": self.quad_degree}


def micro_operator(mesh, p, kappa, f, g, delta=1e-8, quad_degree=None):
    """Operator of the perforated problem with dynamical hole boundary condition."""
    eps = mesh.epsilon
    return ParabolicOperator(mesh, PLaplaceFlux(p, delta), p, kappa, f, g,
                             mass_coef=1.0, surface_coef=eps, reaction_coef=1.0,
                             surface_g_coef=eps, quad_degree=quad_degree)


def assemble_residual(op, u, u_prev, dt):
    """Residual of one implicit Euler step; fixed rows hold ``u_i``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, float)
    u_prev = np.asarray(u_prev, float)
    if u_prev.shape != u.shape:
        raise DimensionMismatch("state and previous state live on different meshes")
    r = op.h_matrix @ (u - u_prev) / dt + op.stationary_residual(u)
    r[op.fixed] = u[op.fixed]
    return r


def _fix_rows(J, fixed):
    keep = sp.diags((~fixed).astype(float))
    return (keep @ J + sp.diags(fixed.astype(float))).tocsr()


def assemble_jacobian(op, u, dt):
    """Derivative of :func:`assemble_residual` with respect to ``u``."""
    J = op.h_matrix / dt + op.stationary_jacobian(u)
    return _fix_rows(J, op.fixed)


class TimeStepSystem:
    """Nonlinear system of one implicit Euler step."""

    def __init__(self, op, u_prev, dt):
        self.op = op
        self.u_prev = np.asarray(u_prev, float)
        self.dt = dt
        self.fixed = op.fixed
        self.affine = op.affine

    def residual(self, u):
        return assemble_residual(self.op, u, self.u_prev, self.dt)

    def jacobian(self, u):
        return assemble_jacobian(self.op, u, self.dt)


# ---------------------------------------------------------------- Newton

@dataclass
class NewtonReport:
    iterations: int
    final_residual_norm: float
    converged: bool
    damping: list = field(default_factory=list)

    def describe(self):
        return {"iterations": self.iterations, "final_residual_norm": self.final_residual_norm,
                "converged": self.converged, "damping": list(self.damping)}


def _factorize(J, fixed):
    free = np.flatnonzero(~fixed)
    A = J[free][:, free].tocsc()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise LinearSolveFailed(f"sparse factorisation failed: {exc}") from exc
    return lu, free, J[free][:, np.flatnonzero(fixed)]


def _solve(factor, fixed, r):
    lu, free, J_fd = factor
    du = np.empty_like(r)
    du[fixed] = -r[fixed]
    rhs = -r[free]
    if J_fd.shape[1]:
        rhs = rhs - J_fd @ du[fixed]
    du[free] = lu.solve(rhs)
    if not np.all(np.isfinite(du)):
        raise LinearSolveFailed("linear solve produced non-finite values")
    return du


def newton_solve(system, initial_guess, tol=1e-10, max_iter=50, damping=True, cache=None):
    """Damped Newton iteration on ``system.residual``.

    Backtracking halves the step until the Euclidean residual norm decreases
    (Armijo constant 1e-4).  For affine systems the factorisation is kept in
    ``cache`` (a dict) and reused across calls.  Returns ``(u, report)``,
    where ``u`` has the type of ``initial_guess`` (array or FieldState).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    state = initial_guess if isinstance(initial_guess, FieldState) else None
    u = np.array(state.bulk if state is not None else initial_guess, float)
    fixed = np.asarray(system.fixed, bool)
    r = system.residual(u)
    norm = float(np.linalg.norm(r))
    hist = []
    it = 0
    while norm > tol:
        if it >= max_iter:
            rep = NewtonReport(it, norm, False, hist)
            raise NewtonDiverged(f"Newton did not converge in {max_iter} iterations "
                                 f"(residual {norm:.3e})", rep)
        if getattr(system, "affine", False) and cache is not None and "factor" in cache:
            factor = cache["factor"]
        else:
            factor = _factorize(system.jacobian(u), fixed)
            if getattr(system, "affine", False) and cache is not None:
                cache["factor"] = factor
        du = _solve(factor, fixed, r)
        lam = 1.0
        while True:
            u_try = u + lam * du
            r_try = system.residual(u_try)
            n_try = float(np.linalg.norm(r_try))
            if not damping or (np.isfinite(n_try) and n_try <= (1.0 - 1e-4 * lam) * norm) or lam < 2.0 ** -20:
                break
            lam *= 0.5
        if not np.isfinite(n_try):
            raise NewtonDiverged("residual became non-finite", NewtonReport(it + 1, n_try, False, hist))
        hist.append(lam)
        u, r, norm = u_try, r_try, n_try
        it += 1
    rep = NewtonReport(it, norm, True, hist)
    if state is not None:
        return FieldState(state.time, u, state.hole_nodes), rep
    return u, rep


def integrate(op, u0, dt, n_steps, tol=1e-10, max_iter=50, t0=0.0, on_step=None):
    """Implicit Euler trajectory ``[u^0, ..., u^n_steps]`` and Newton reports.

    ``on_step(n, u)`` is called after every accepted step.
    """
    u = np.array(u0, float)
    states = [u]
    reports = []
    cache = {}
    for n in range(1, n_steps + 1):
        system = TimeStepSystem(op, u, dt)
        try:
            u, rep = newton_solve(system, u, tol, max_iter, cache=cache)
        except NewtonDiverged as exc:
            exc.step = n
            raise
        states.append(u)
        reports.append(rep)
        if on_step is not None:
            on_step(n, u)
    return states, reports


def energy_diagnostic(op, states, dt):
    """Discrete energy-balance residual on each step ``[t_{n-1}, t_n]``.

    ``r_n = (|U^n|_H^2 - |U^{n-1}|_H^2) / (2 dt) + (D(u^n) + D(u^{n-1})) / 2``
    where ``D(u) = <A(u), u>`` gathers the flux, reaction and boundary
    reaction terms.  It is zero for an exact solution up to ``O(dt^2)`` and
    of size ``O(dt)`` on implicit Euler trajectories.
    """
    vals = [s.bulk if isinstance(s, FieldState) else np.asarray(s, float) for s in states]
    E = np.array([op.h_norm_sq(v) for v in vals])
    D = np.array([op.dissipation(v) for v in vals])
    return (E[1:] - E[:-1]) / (2.0 * dt) + 0.5 * (D[1:] + D[:-1])


# ---------------------------------------------------------------- norms

def lp_norm(mesh, u, p=2.0, degree=None):
    """``||u||_{L^p}`` of the P1 field by quadrature."""
    lam, w = simplex_rule(mesh.dim, degree or max(2, math.ceil(p) + 1))
    U = u[mesh.elements] @ lam.T
    return float((mesh.volumes @ (np.abs(U) ** p @ w)) ** (1.0 / p))


def grad_lp_norm(mesh, u, p=2.0):
    G = gradients(mesh, np.asarray(u, float))
    return float((mesh.volumes @ np.linalg.norm(G, axis=1) ** p) ** (1.0 / p))


def surface_lp_norm(mesh, u, p=2.0, degree=None):
    if len(mesh.hole_facets) == 0:
        return 0.0
    lam, w = simplex_rule(mesh.dim - 1, degree or max(2, math.ceil(p) + 1))
    U = u[mesh.hole_facets] @ lam.T
    return float((mesh.hole_facet_measures @ (np.abs(U) ** p @ w)) ** (1.0 / p))


def l2_error_to(mesh, u, exact, degree=6):
    """``||u_h - exact||_{L^2}`` with ``exact`` evaluated at quadrature points."""
    lam, w = simplex_rule(mesh.dim, degree)
    X = np.einsum("qi,eid->eqd", lam, mesh.nodes[mesh.elements])
    U = u[mesh.elements] @ lam.T
    V = exact(*np.moveaxis(X, -1, 0))
    return float(np.sqrt(mesh.volumes @ ((U - V) ** 2 @ w)))
