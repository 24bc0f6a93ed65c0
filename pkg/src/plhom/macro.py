"""Homogenised problem on the hole-free domain.

    (theta + sigma) du/dt - div b(grad u) + theta (kappa |u|^(p-2) u + f(u))
        + sigma g(u) = 0,   u = 0 on the outer boundary,

with ``theta = |Y*|/|Y|`` and ``sigma = |dF|/|Y|``.  ``b`` comes either from
an :class:`~plhom.cell_problem.EffectiveFluxTable` or, for p = 2, from the
effective tensor.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from .cell_problem import EffectiveFluxTable
from .errors import ConfigMismatch, FluxTableOutOfPrecision
from .micro import _n_steps, initial_field
from .nonlinearity import Nonlinearity, is_sign_dissipative
from .pde_core import (FieldState, LinearFlux, ParabolicOperator, TabulatedFlux, assemble_residual,
                       integrate)

logger = logging.getLogger(__name__)


@dataclass
class MacroRunConfig:
    p: float
    kappa: float
    dt: float
    T: float
    theta: float
    sigma: float
    flux: object  # EffectiveFluxTable or (N, N) array
    f: Nonlinearity
    g: Nonlinearity
    initial: object = "sin(pi*x)*sin(pi*y)"
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    flux_table_tol: float = None  # None: the Newton tolerance
    quad_degree: int = None

    def describe(self):
        if isinstance(self.flux, EffectiveFluxTable):
            flux = {"kind": "table", "n_directions": len(self.flux.angles),
                    "interpolation_error": self.flux.interpolation_error}
        else:
            flux = {"kind": "tensor", "A": np.asarray(self.flux).tolist()}
        return {"p": self.p, "kappa": self.kappa, "dt": self.dt, "T": self.T, "theta": self.theta,
                "sigma": self.sigma, "flux": flux, "f": self.f.describe(), "g": self.g.describe(),
                "initial": getattr(self.initial, "expr", str(self.initial)),
                "newton_tol": self.newton_tol, "newton_max_iter": self.newton_max_iter,
                "flux_table_tol": self.flux_table_tol, "quad_degree": self.quad_degree}


@dataclass
class MacroTrajectory:
    mesh: object
    op: object
    dt: float
    states: list
    h_norm: np.ndarray
    newton_reports: list
    dissipation_checked: bool = False
    dissipation_ok: bool = True

    @property
    def times(self):
        return np.array([s.time for s in self.states])

    def state_at(self, t):
        n = round(t / self.dt)
        if abs(n * self.dt - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= n < len(self.states):
            raise ValueError(f"t={t} is not a stored time level")
        return self.states[n]


def macro_operator(mesh, cfg):
    if not (0.0 < cfg.theta <= 1.0) or cfg.sigma < 0.0:
        raise ConfigMismatch(f"invalid coefficients theta={cfg.theta}, sigma={cfg.sigma}")
    if isinstance(cfg.flux, EffectiveFluxTable):
        if abs(cfg.flux.p - cfg.p) > 1e-12:
            raise ConfigMismatch(f"flux table built for p={cfg.flux.p}, run uses p={cfg.p}")
        err = cfg.flux.interpolation_error
        tol = cfg.newton_tol if cfg.flux_table_tol is None else cfg.flux_table_tol
        if err is not None and err > tol:
            raise FluxTableOutOfPrecision(
                f"table interpolation error {err:.3g} exceeds {tol:.3g}; "
                "refine the table or set flux_table_tol explicitly")
        flux = TabulatedFlux(cfg.flux)
    else:
        if cfg.p != 2.0:
            raise ConfigMismatch("a constant effective tensor only applies to p = 2")
        flux = LinearFlux(cfg.flux)
    return ParabolicOperator(mesh, flux, cfg.p, cfg.kappa, cfg.f, cfg.g,
                             mass_coef=cfg.theta + cfg.sigma, surface_coef=0.0,
                             reaction_coef=cfg.theta, bulk_g_coef=cfg.sigma,
                             surface_g_coef=0.0, quad_degree=cfg.quad_degree)


def run_macro(mesh, cfg, on_step=None):
    """Implicit Euler run of the homogenised problem on a hole-free mesh."""
    if mesh.cell.hole is not None:
        raise ConfigMismatch("the homogenised problem lives on a hole-free mesh")
    n_steps = _n_steps(cfg.dt, cfg.T)
    op = macro_operator(mesh, cfg)
    u0 = initial_field(mesh, cfg.initial, op.fixed)
    vals, reports = integrate(op, u0, cfg.dt, n_steps, cfg.newton_tol, cfg.newton_max_iter,
                              on_step=on_step)
    empty = np.zeros(0, int)
    states = [FieldState(n * cfg.dt, v, empty) for n, v in enumerate(vals)]
    h = np.sqrt([op.h_norm_sq(v) for v in vals])
    traj = MacroTrajectory(mesh, op, cfg.dt, states, h, reports)
    if cfg.kappa >= 0 and is_sign_dissipative(cfg.f) and is_sign_dissipative(cfg.g):
        traj.dissipation_checked = True
        traj.dissipation_ok = bool(np.all(np.diff(h) <= 1e-12 * max(h[0], 1e-300)))
    return traj


def weak_residual_check(traj, cfg=None):
    """Norm of the discrete weak residual at every step ``n >= 1``.

    Every nodal basis function of the free nodes is used as test function;
    a converged run gives values at the Newton tolerance.
    """
    op = traj.op if cfg is None else macro_operator(traj.mesh, cfg)
    out = []
    for prev, cur in zip(traj.states[:-1], traj.states[1:]):
        r = assemble_residual(op, cur.bulk, prev.bulk, traj.dt)
        r[op.fixed] = cur.bulk[op.fixed]
        out.append(float(np.linalg.norm(r)))
    return np.array(out)
