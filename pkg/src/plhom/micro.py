"""Time integration of the perforated problem and its diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.integrate import trapezoid

from .errors import ConfigMismatch, MeshTooCoarse
from .geometry import _signed_volumes, measures
from .nonlinearity import Nonlinearity, is_sign_dissipative, lower_growth
from .pde_core import (FieldState, PLaplaceFlux, _coo, _fix_rows, _scatter, energy_diagnostic,
                       grad_lp_norm, gradients, integrate, lp_norm, micro_operator, newton_solve,
                       surface_lp_norm)
from .quadrature import simplex_rule

logger = logging.getLogger(__name__)

_EXPR_NAMES = {name: getattr(np, name) for name in
               ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh",
                "minimum", "maximum", "where")}
_EXPR_NAMES["pi"] = math.pi


def profile(expr):
    """Closed-form field ``expr`` in the variables ``x``, ``y`` (, ``z``)."""
    if callable(expr):
        return expr
    code = compile(str(expr), "<initial>", "eval")
    for name in code.co_names:
        if name not in _EXPR_NAMES and name not in ("x", "y", "z"):
            raise ValueError(f"unknown name {name!r} in expression {expr!r}")

    def fn(*X):
        env = dict(_EXPR_NAMES)
        env.update(zip(("x", "y", "z"), X))
        val = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(val, float), np.shape(X[0])).copy()

    fn.expr = str(expr)
    return fn


def initial_field(mesh, expr, fixed=None, tol=1e-10):
    """Evaluate ``expr`` at the nodes; the outer boundary must be (numerically) zero."""
    u = profile(expr)(*mesh.nodes.T)
    fixed = mesh.outer_nodes if fixed is None else fixed
    if fixed.any() and np.max(np.abs(u[fixed])) > tol:
        raise ConfigMismatch("initial data does not vanish on the outer boundary")
    u[fixed] = 0.0
    return u


def _n_steps(dt, T):
    if not (0 < dt <= T):
        raise ConfigMismatch(f"need 0 < dt <= T (dt={dt}, T={T})")
    n = round(T / dt)
    if abs(n * dt - T) > 1e-9 * T:
        raise ConfigMismatch(f"T={T} is not a multiple of dt={dt}")
    return n


@dataclass
class MicroRunConfig:
    p: float
    kappa: float
    epsilon: float
    dt: float
    T: float
    f: Nonlinearity
    g: Nonlinearity
    initial: object = "sin(pi*x)*sin(pi*y)"
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    delta: float = 1e-8
    quad_degree: int = None
    initial_bound: float = None

    def describe(self):
        return {"p": self.p, "kappa": self.kappa, "epsilon": self.epsilon, "dt": self.dt, "T": self.T,
                "f": self.f.describe(), "g": self.g.describe(),
                "initial": getattr(self.initial, "expr", str(self.initial)),
                "newton_tol": self.newton_tol, "newton_max_iter": self.newton_max_iter,
                "delta": self.delta, "quad_degree": self.quad_degree,
                "initial_bound": self.initial_bound}


@dataclass
class MicroTrajectory:
    mesh: object
    op: object
    dt: float
    states: list
    h_norm: np.ndarray
    w1p_norm: np.ndarray
    energy_residual: np.ndarray
    newton_reports: list
    dissipation_checked: bool = False
    dissipation_ok: bool = True
    initial_energy: float = 0.0

    @property
    def times(self):
        return np.array([s.time for s in self.states])

    def state_at(self, t):
        n = round(t / self.dt)
        if abs(n * self.dt - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= n < len(self.states):
            raise ValueError(f"t={t} is not a stored time level")
        return self.states[n]

    def diagnostics_rows(self):
        for s, h, w, e in zip(self.states, self.h_norm, self.w1p_norm, self.energy_residual):
            yield s.time, h, w, e


def w1p_norm(mesh, u, p, degree=None):
    """Full ``W^{1,p}`` norm ``(|u|_p^p + |grad u|_p^p)^(1/p)``."""
    return (lp_norm(mesh, u, p, degree) ** p + grad_lp_norm(mesh, u, p) ** p) ** (1.0 / p)


def run_micro(mesh, cfg, on_step=None):
    """Implicit Euler run of the perforated problem.

    The hole-boundary time derivative and reaction enter the Newton system
    with weight ``epsilon`` (surface mass matrix), so the trace always equals
    the bulk field on the hole nodes.
    """
    if abs(mesh.epsilon - cfg.epsilon) > 1e-12:
        raise ConfigMismatch(f"mesh epsilon {mesh.epsilon} != configured {cfg.epsilon}")
    n_steps = _n_steps(cfg.dt, cfg.T)
    op = micro_operator(mesh, cfg.p, cfg.kappa, cfg.f, cfg.g, cfg.delta, cfg.quad_degree)
    u0 = initial_field(mesh, cfg.initial, op.fixed)
    e0 = op.h_norm_sq(u0)
    if cfg.initial_bound is not None and e0 > cfg.initial_bound:
        raise ConfigMismatch(f"initial H-energy {e0:.4g} exceeds the declared bound {cfg.initial_bound}")
    vals, reports = integrate(op, u0, cfg.dt, n_steps, cfg.newton_tol, cfg.newton_max_iter,
                              on_step=on_step)
    hn = mesh.hole_nodes
    states = [FieldState(n * cfg.dt, v, hn) for n, v in enumerate(vals)]
    h = np.sqrt([op.h_norm_sq(v) for v in vals])
    w = np.array([w1p_norm(mesh, v, cfg.p, op.quad_degree) for v in vals])
    er = np.concatenate([[np.nan], energy_diagnostic(op, vals, cfg.dt)])
    traj = MicroTrajectory(mesh, op, cfg.dt, states, h, w, er, reports, initial_energy=e0)
    if cfg.kappa >= 0 and is_sign_dissipative(cfg.f) and is_sign_dissipative(cfg.g):
        traj.dissipation_checked = True
        traj.dissipation_ok = bool(np.all(np.diff(h) <= 1e-12 * max(h[0], 1e-300)))
        if not traj.dissipation_ok:
            logger.warning("H-norm increased during a dissipative run")
    return traj


# ---------------------------------------------------------------- extension

class _DirichletPLaplace:
    def __init__(self, mesh, elements, fixed, data, flux):
        self.mesh = mesh
        self.elements = elements
        self.fixed = fixed
        self.data = data
        self.flux = flux
        self.affine = flux.linear
        self.vol = _signed_volumes(mesh.nodes, elements)
        X = mesh.nodes[elements]
        T = np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))
        Tinv = np.linalg.inv(T)
        g = np.empty((len(elements), mesh.dim + 1, mesh.dim))
        g[:, 1:, :] = Tinv
        g[:, 0, :] = -Tinv.sum(axis=1)
        self.grads = g

    def _G(self, u):
        return np.einsum("ei,eid->ed", u[self.elements], self.grads)

    def residual(self, u):
        F = self.flux(self._G(u))
        local = self.vol[:, None] * np.einsum("eid,ed->ei", self.grads, F)
        r = _scatter(self.elements, local, self.mesh.n_nodes)
        r[self.fixed] = u[self.fixed] - self.data[self.fixed]
        return r

    def jacobian(self, u):
        D = self.flux.derivative(self._G(u))
        blocks = self.vol[:, None, None] * np.einsum("eia,eab,ejb->eij", self.grads, D, self.grads)
        return _fix_rows(_coo(self.elements, blocks, self.mesh.n_nodes), self.fixed)


def extend_into_holes(mesh, u, p=2.0, delta=1e-8, tol=1e-12, max_iter=60):
    """p-harmonic extension of a nodal field on ``mesh`` to ``mesh.companion``.

    Values on the perforated mesh are kept; inside every hole the discrete
    p-Laplace Dirichlet problem with the trace as data is solved (holes are
    decoupled, so they are solved together).
    """
    u = np.asarray(getattr(u, "bulk", u), float)
    comp = mesh.companion
    if comp is None:
        return u.copy()
    known = np.zeros(comp.n_nodes, bool)
    known[mesh.parent] = True
    data = np.zeros(comp.n_nodes)
    data[mesh.parent] = u
    hole_el = comp.elements[~np.all(known[comp.elements], axis=1)]
    if len(hole_el) == 0:
        return data
    if _signed_volumes(comp.nodes, hole_el).min() <= 0:
        raise MeshTooCoarse("hole triangulation is degenerate; refine the grid")
    lin = _DirichletPLaplace(comp, hole_el, known, data, PLaplaceFlux(2.0))
    ext, _ = newton_solve(lin, data, tol=tol * max(1.0, np.abs(u).max()), max_iter=3)
    if p != 2.0:
        system = _DirichletPLaplace(comp, hole_el, known, data, PLaplaceFlux(p, delta))
        scale = max(1e-300, grad_lp_norm(mesh, u, 2.0)) ** (p - 1.0)
        ext, _ = newton_solve(system, ext, tol=tol * scale, max_iter=max_iter)
    ext[known] = data[known]
    return ext


def extension_gradient_ratio(mesh, u, p=2.0, extended=None):
    """``|grad ext(u)|_{p, Omega} / |grad u|_{p, Omega_eps}``."""
    if extended is None:
        extended = extend_into_holes(mesh, u, p)
    num = grad_lp_norm(mesh.companion if mesh.companion is not None else mesh, extended, p)
    den = grad_lp_norm(mesh, np.asarray(getattr(u, "bulk", u), float), p)
    return num / den if den > 0 else (0.0 if num == 0 else math.inf)


# ---------------------------------------------------------------- a priori diagnostics

@dataclass
class AprioriReport:
    sup_norm: float
    integral_norm: float
    grad_integral: float
    bound_rhs: float
    bound_residual: float
    alpha1: float
    beta: float
    epsilon: float

    def describe(self):
        return dict(self.__dict__)


def apriori_diagnostics(traj):
    """Energy-estimate diagnostics of a trajectory.

    ``sup_norm`` is ``sup_t ||u(t)||_{W^{1,p}(Omega_eps)}``, ``integral_norm``
    ``int_0^T ||u||^p dt`` and ``grad_integral`` ``int_0^T |grad u|_p^p dt``
    (trapezoidal in time).  ``bound_residual`` is the largest value over the
    steps of the discrete energy inequality

        d/dt |U|_H^2 + 2|grad u|_p^p + 2 kappa |u|_p^p + 2 alpha1 |u|_q1^q1
            + 2 alpha1 eps |psi|_q2^q2 - 2 beta (|Omega_eps| + eps |dF_eps|),

    which must be <= 0 (up to solver tolerance).
    """
    op, mesh, dt = traj.op, traj.mesh, traj.dt
    p, kappa = op.p, op.kappa
    f, g = op.f, op.g
    vals = [s.bulk for s in traj.states]
    deg = op.quad_degree
    wn = traj.w1p_norm
    sup = float(np.max(wn))
    integral = float(trapezoid(wn ** p, dx=dt)) if len(vals) > 1 else 0.0
    gp = np.array([grad_lp_norm(mesh, v, p) ** p for v in vals])
    grad_int = float(trapezoid(gp, dx=dt)) if len(vals) > 1 else 0.0
    a_f, b_f = lower_growth(f)
    a_g, b_g = lower_growth(g)
    alpha1, beta = min(a_f, a_g), max(b_f, b_g)
    rep = measures(mesh)
    rhs = 2.0 * beta * (rep.omega_eps + rep.scaled_surf)
    eps = mesh.epsilon
    E = traj.h_norm ** 2
    worst = -math.inf if len(vals) > 1 else 0.0
    for n in range(1, len(vals)):
        v = vals[n]
        lhs = (E[n] - E[n - 1]) / dt + 2 * gp[n] + 2 * kappa * _lp_pow(mesh, v, p, deg)
        lhs += 2 * alpha1 * _lp_pow(mesh, v, f.exponent, deg)
        if len(mesh.hole_facets):
            lhs += 2 * alpha1 * eps * surface_lp_norm(mesh, v, g.exponent, deg) ** g.exponent
        worst = max(worst, lhs - rhs)
    return AprioriReport(sup, integral, grad_int, rhs, float(worst), alpha1, beta, eps)


def _lp_pow(mesh, v, q, degree):
    return lp_norm(mesh, v, q, degree) ** q


def uniform_bound_check(reports, max_variation=0.2):
    """Relative spread of ``sup_norm`` over an epsilon sweep and whether it is within bounds."""
    sups = np.array([r.sup_norm for r in reports])
    if sups.max() == 0:
        return 0.0, True
    var = float((sups.max() - sups.min()) / sups.max())
    return var, var <= max_variation


# ---------------------------------------------------------------- surface functional

def surface_functional(mesh, v, h_weight=1.0, degree=6):
    """``eps * integral over dF_eps of h(x/eps) v(x)``.

    ``v`` is a nodal field on ``mesh`` or a callable of the coordinates;
    ``h_weight`` a constant or a callable of the cell coordinates ``y``.
    """
    hf = mesh.hole_facets
    if len(hf) == 0:
        return 0.0
    lam, w = simplex_rule(mesh.dim - 1, degree)
    X = np.einsum("qi,fid->fqd", lam, mesh.nodes[hf])
    if callable(v):
        V = v(*np.moveaxis(X, -1, 0))
    else:
        V = np.asarray(getattr(v, "bulk", v), float)[hf] @ lam.T
    if callable(h_weight):
        Yc = X / mesh.epsilon - mesh.hole_index[:, None, :]
        Hw = h_weight(*np.moveaxis(Yc, -1, 0))
    else:
        Hw = float(h_weight)
    return float(mesh.epsilon * (mesh.hole_facet_measures @ ((Hw * V) @ w)))
