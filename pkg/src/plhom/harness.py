"""Epsilon sweeps: homogenization error studies and measure-limit checks."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import csv
import io
import logging
import math
import time

import numpy as np

from .cell_problem import _workers, build_flux_table, effective_tensor_p2
from .errors import ConfigMismatch, PlhomError, StudyAborted
from .geometry import build_cell, build_domain_mesh, build_perforated_mesh, build_periodic_cell_mesh, mesh_statistics
from .macro import MacroRunConfig, run_macro
from .micro import MicroRunConfig, extend_into_holes, extension_gradient_ratio, profile, run_micro, surface_functional
from .nonlinearity import check_nonlinearity, cubic, linear, validate_exponents
from .output import RunManifest
from .pde_core import lp_norm
from .quadrature import simplex_rule

logger = logging.getLogger(__name__)

VERDICT_RULE = ("PASS iff max_t e(eps) is strictly decreasing as eps decreases "
                "and e(eps_min)/e(eps_max) <= {ratio:g}")


@dataclass
class StudyConfig:
    """Parameters shared by every run of a sweep."""

    hole: object = "square"
    dim: int = 2
    p: float = 2.0
    kappa: float = 1.0
    f: object = field(default_factory=cubic)
    g: object = field(default_factory=linear)
    T: float = 0.25
    dt: float = 2.5e-3
    initial: str = "sin(pi*x)*sin(pi*y)"
    epsilons: tuple = (0.25, 0.125, 0.0625)
    micro_h: float = 1.0 / 64
    macro_h: float = 1.0 / 64
    cell_h: float = 1.0 / 64
    n_samples: int = 5
    n_directions: int = 32
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    cell_tol: float = 1e-12
    delta: float = 1e-8
    flux_table_tol: float = None
    ratio_bound: float = 0.5
    override_exponents: bool = False

    def describe(self):
        d = dict(self.__dict__)
        d["f"] = self.f.describe()
        d["g"] = self.g.describe()
        d["hole"] = build_cell(self.dim, self.hole).describe()["hole"]
        d["epsilons"] = list(self.epsilons)
        return d

    @property
    def sample_times(self):
        n = round(self.T / self.dt)
        steps = np.rint(np.linspace(0, n, self.n_samples)).astype(int)
        return steps * self.dt


def verdict(errors, ratio_bound=0.5):
    """Pure pass/fail rule on ``errors[i, j] = e(eps_i, t_j)``, rows ordered by decreasing eps."""
    e = np.max(np.asarray(errors, float), axis=1)
    if len(e) < 2:
        return False
    decreasing = bool(np.all(np.diff(e) < 0))
    ratio = e[-1] / e[0] if e[0] > 0 else 0.0
    return decreasing and ratio <= ratio_bound


def _lattice(mesh, unit):
    return np.rint(mesh.keys * (mesh.key_unit / unit)).astype(np.int64)


def transfer_indices(fine, coarse):
    """Index into ``fine`` nodes of every ``coarse`` node (the grids must be nested)."""
    unit = min(fine.key_unit, coarse.key_unit)
    kf = _lattice(fine, unit)
    kc = _lattice(coarse, unit)
    base = int(max(kf.max(), kc.max())) + 1
    cf = np.ravel_multi_index(kf.T, (base,) * fine.dim)
    cc = np.ravel_multi_index(kc.T, (base,) * coarse.dim)
    order = np.argsort(cf)
    pos = np.clip(np.searchsorted(cf[order], cc), 0, len(cf) - 1)
    idx = order[pos]
    if not np.array_equal(cf[idx], cc):
        raise ConfigMismatch("macro mesh nodes are not a subset of the micro grid "
                             "(the macro step must be a multiple of the micro step)")
    return idx


@dataclass
class ConvergenceStudy:
    epsilons: list
    sample_times: np.ndarray
    errors: np.ndarray
    extension_ratios: np.ndarray
    ratio_bound: float
    manifest: RunManifest = None
    chi_errors: dict = field(default_factory=dict)
    mu_errors: dict = field(default_factory=dict)

    @property
    def max_errors(self):
        return self.errors.max(axis=1)

    @property
    def passed(self):
        return verdict(self.errors, self.ratio_bound)

    @property
    def error_ratio(self):
        e = self.max_errors
        return float(e[-1] / e[0]) if e[0] > 0 else 0.0

    def to_csv(self, manifest_name=None):
        buf = io.StringIO()
        buf.write("# homogenization error e(eps, t) = |ext(u_eps)(t) - u(t)|_{L^p(Omega)}\n")
        if manifest_name:
            buf.write(f"# manifest: {manifest_name}\n")
        buf.write(f"# verdict rule: {VERDICT_RULE.format(ratio=self.ratio_bound)}\n")
        buf.write(f"# verdict: {'PASS' if self.passed else 'FAIL'} (ratio {self.error_ratio:.6g})\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon"] + [f"t={t:.6g}" for t in self.sample_times]
                   + ["max_error", "max_extension_ratio"])
        for eps, row, ext in zip(self.epsilons, self.errors, self.extension_ratios):
            w.writerow([repr(float(eps))] + [repr(float(v)) for v in row]
                       + [repr(float(row.max())), repr(float(np.max(ext)))])
        return buf.getvalue()


def _check_exponents(cfg):
    chk = validate_exponents(cfg.p, cfg.dim, cfg.f.exponent, cfg.g.exponent)
    if not chk.admissible_theorem and not cfg.override_exponents:
        raise ConfigMismatch("exponents outside the theorem's range: " + "; ".join(chk.messages)
                             + " (set override_exponents to run anyway)")
    return chk


def homogenized_flux(cfg, cell):
    """Effective tensor (p = 2) or flux table from the periodic cell problem."""
    cell_mesh = build_periodic_cell_mesh(cell, cfg.cell_h)
    if cfg.p == 2.0:
        return effective_tensor_p2(cell_mesh, cfg.cell_tol, delta=cfg.delta)
    return build_flux_table(cell_mesh, cfg.p, cfg.n_directions, cfg.cell_tol, cfg.delta)


def run_convergence_study(cfg, workers=None):
    """Micro runs over ``cfg.epsilons`` against one homogenised run.

    Micro fields are extended p-harmonically into the holes, restricted to
    the nodes of the macro mesh and compared in ``L^p(Omega)`` at
    ``cfg.sample_times``.
    """
    t_start = time.perf_counter()
    chk = _check_exponents(cfg)
    cell = build_cell(cfg.dim, cfg.hole)
    times = cfg.sample_times
    try:
        flux = homogenized_flux(cfg, cell)
        macro_mesh = build_domain_mesh(cfg.dim, cfg.macro_h)
        mcfg = MacroRunConfig(cfg.p, cfg.kappa, cfg.dt, cfg.T, cell.theta, cell.sigma, flux, cfg.f, cfg.g,
                              cfg.initial, cfg.newton_tol, cfg.newton_max_iter, cfg.flux_table_tol)
        macro = run_macro(macro_mesh, mcfg)
    except PlhomError as exc:
        raise StudyAborted(f"homogenised run failed: {exc}") from exc
    t_macro = time.perf_counter() - t_start
    U = [macro.state_at(t).bulk for t in times]

    def one(eps):
        t0 = time.perf_counter()
        try:
            mesh = build_perforated_mesh(cell, epsilon=eps, target_h=min(cfg.micro_h, eps / 4.0))
            idx = transfer_indices(mesh.companion if mesh.companion is not None else mesh, macro_mesh)
            traj = run_micro(mesh, MicroRunConfig(cfg.p, cfg.kappa, eps, cfg.dt, cfg.T, cfg.f, cfg.g,
                                                  cfg.initial, cfg.newton_tol, cfg.newton_max_iter,
                                                  cfg.delta))
            errs, ratios = [], []
            for t, u in zip(times, U):
                v = traj.state_at(t).bulk
                ext = extend_into_holes(mesh, v, cfg.p, cfg.delta)
                errs.append(lp_norm(macro_mesh, ext[idx] - u, cfg.p))
                ratios.append(extension_gradient_ratio(mesh, v, cfg.p, ext))
        except PlhomError as exc:
            raise StudyAborted(f"run at epsilon={eps} failed: {exc}", eps) from exc
        stats = mesh_statistics(mesh)
        stats["newton_iterations"] = int(sum(r.iterations for r in traj.newton_reports))
        return errs, ratios, stats, time.perf_counter() - t0

    workers = workers or _workers()
    if workers == 1:
        out = [one(e) for e in cfg.epsilons]
    else:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(one, cfg.epsilons))
    errors = np.array([o[0] for o in out])
    ratios = np.array([o[1] for o in out])
    # the ratio is undefined where the field vanishes
    ratios = np.where(np.isfinite(ratios), ratios, 0.0)
    manifest = RunManifest(
        "converge", cfg.describe(),
        mesh={"macro": mesh_statistics(macro_mesh), "micro": {repr(e): o[2] for e, o in zip(cfg.epsilons, out)}},
        tolerances={"newton_tol": cfg.newton_tol, "cell_tol": cfg.cell_tol,
                    "flux_table_tol": cfg.flux_table_tol},
        delta=cfg.delta,
        admissibility={"exponents": chk.describe(), "f": check_nonlinearity(cfg.f),
                       "g": check_nonlinearity(cfg.g), "override": cfg.override_exponents},
        timing={"macro_s": t_macro, "micro_s": {repr(e): o[3] for e, o in zip(cfg.epsilons, out)},
                "total_s": time.perf_counter() - t_start})
    study = ConvergenceStudy(list(cfg.epsilons), times, errors, ratios, cfg.ratio_bound, manifest)
    manifest.results = {"max_errors": study.max_errors.tolist(), "error_ratio": study.error_ratio,
                        "verdict": "PASS" if study.passed else "FAIL",
                        "max_extension_ratio": float(ratios.max())}
    return study


# ---------------------------------------------------------------- measure limits

DEFAULT_TEST_FUNCTIONS = ("1", "x", "sin(pi*x)*sin(pi*y)")


def integrate_function(mesh, fn, degree=8):
    """Quadrature of a callable over the elements of ``mesh`` (compensated sum)."""
    lam, w = simplex_rule(mesh.dim, degree)
    X = np.einsum("qi,eid->eqd", lam, mesh.nodes[mesh.elements])
    V = np.broadcast_to(fn(*np.moveaxis(X, -1, 0)), X.shape[:2])
    return math.fsum(mesh.volumes * (V @ w))


@dataclass
class MeasureChecks:
    epsilons: list
    functions: list
    chi_errors: np.ndarray  # (n_functions, n_eps)
    mu_errors: np.ndarray
    theta: float
    sigma: float

    def ratios(self, which="mu"):
        e = self.mu_errors if which == "mu" else self.chi_errors
        with np.errstate(divide="ignore", invalid="ignore"):
            return e[:, 1:] / e[:, :-1]

    def to_csv(self, manifest_name=None):
        buf = io.StringIO()
        buf.write("# chi_error = |int chi_eps v - theta int v|, mu_error = |<mu_eps, v> - sigma int v|\n")
        if manifest_name:
            buf.write(f"# manifest: {manifest_name}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["function", "epsilon", "chi_error", "mu_error"])
        for k, fn in enumerate(self.functions):
            for j, eps in enumerate(self.epsilons):
                w.writerow([fn, repr(float(eps)), repr(float(self.chi_errors[k, j])),
                            repr(float(self.mu_errors[k, j]))])
        return buf.getvalue()


def run_measure_checks(hole="square", epsilons=(0.25, 0.125, 0.0625), functions=DEFAULT_TEST_FUNCTIONS,
                       dim=2, h=1.0 / 64, degree=8):
    """Volume-fraction and surface-measure limits for the given test functions."""
    cell = build_cell(dim, hole)
    chi = np.zeros((len(functions), len(epsilons)))
    mu = np.zeros_like(chi)
    for j, eps in enumerate(epsilons):
        mesh = build_perforated_mesh(cell, epsilon=eps, target_h=min(h, eps / 4.0))
        full = mesh.companion if mesh.companion is not None else mesh
        for k, expr in enumerate(functions):
            fn = profile(expr)
            whole = integrate_function(full, fn, degree)
            chi[k, j] = abs(integrate_function(mesh, fn, degree) - cell.theta * whole)
            mu[k, j] = abs(surface_functional(mesh, fn, 1.0, degree) - cell.sigma * whole)
    return MeasureChecks(list(epsilons), list(functions), chi, mu, cell.theta, cell.sigma)


# ---------------------------------------------------------------- time refinement of the energy residual

def energy_refinement(mesh, cfg, dts):
    """Max energy residual of runs with each step in ``dts`` and the successive ratios."""
    maxima = []
    for dt in dts:
        c = MicroRunConfig(**{**cfg.__dict__, "dt": dt})
        traj = run_micro(mesh, c)
        maxima.append(float(np.nanmax(np.abs(traj.energy_residual))))
    maxima = np.array(maxima)
    return maxima, maxima[1:] / maxima[:-1]
