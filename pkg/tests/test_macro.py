import math

import numpy as np
import pytest

from plhom.cell_problem import build_flux_table, effective_tensor_p2
from plhom.errors import ConfigMismatch, FluxTableOutOfPrecision
from plhom.geometry import build_cell, build_domain_mesh, build_perforated_mesh
from plhom.macro import MacroRunConfig, MacroTrajectory, run_macro, weak_residual_check
from plhom.nonlinearity import cubic, linear, zero
from plhom.pde_core import FieldState, l2_error_to


@pytest.fixture(scope="module")
def mesh16():
    return build_domain_mesh(2, 1.0 / 16)


@pytest.fixture(scope="module")
def tensor(square_cell_mesh):
    return effective_tensor_p2(square_cell_mesh)


def test_empty_hole_analytic_decay():
    m = build_domain_mesh(2, 1.0 / 32)
    cfg = MacroRunConfig(2.0, 1.0, 1e-3, 0.05, 1.0, 0.0, np.eye(2), zero(), zero())
    tr = run_macro(m, cfg)
    lam = 2 * math.pi ** 2 + 1
    err = l2_error_to(m, tr.states[-1].bulk,
                      lambda x, y: math.exp(-lam * 0.05) * np.sin(math.pi * x) * np.sin(math.pi * y))
    assert err < 5e-3


def test_zero_trajectory(mesh16, tensor, square_cell):
    cfg = MacroRunConfig(2.0, 1.0, 0.05, 0.1, square_cell.theta, square_cell.sigma, tensor, cubic(), linear(),
                         initial="0")
    tr = run_macro(mesh16, cfg)
    assert all(np.all(s.bulk == 0) for s in tr.states)
    assert np.all(weak_residual_check(tr) == 0)


def test_weak_residual_detects_noise(mesh16, tensor, square_cell, rng):
    cfg = MacroRunConfig(2.0, 1.0, 0.01, 0.05, square_cell.theta, square_cell.sigma, tensor, cubic(), linear())
    tr = run_macro(mesh16, cfg)
    assert weak_residual_check(tr).max() <= 1e-8
    assert tr.dissipation_ok
    noisy = [FieldState(s.time, s.bulk + 1e-3 * rng.normal(size=s.bulk.shape) * ~tr.op.fixed, s.hole_nodes)
             for s in tr.states]
    bad = MacroTrajectory(tr.mesh, tr.op, tr.dt, noisy, tr.h_norm, tr.newton_reports)
    assert weak_residual_check(bad).min() >= 1e-5


def test_table_vs_tensor_small(mesh16, tensor, square_cell_mesh, square_cell):
    table = build_flux_table(square_cell_mesh, 2.0, 16)
    common = (2.0, 1.0, 0.01, 0.05, square_cell.theta, square_cell.sigma)
    a = run_macro(mesh16, MacroRunConfig(*common, tensor, cubic(), linear())).states[-1].bulk
    b = run_macro(mesh16, MacroRunConfig(*common, table, cubic(), linear())).states[-1].bulk
    assert l2_error_to(mesh16, a - b, lambda x, y: 0 * x) < 1e-8


def test_table_precision_guard(mesh16, square_cell_mesh, square_cell):
    table = build_flux_table(square_cell_mesh, 3.0, 16)
    cfg = MacroRunConfig(3.0, 1.0, 0.01, 0.02, square_cell.theta, square_cell.sigma, table, cubic(), linear())
    with pytest.raises(FluxTableOutOfPrecision):
        run_macro(mesh16, cfg)
    cfg.flux_table_tol = 0.05
    tr = run_macro(mesh16, cfg)
    assert all(r.converged for r in tr.newton_reports) and tr.dissipation_ok


def test_config_checks(mesh16, square_cell_mesh, square_cell, tensor):
    table = build_flux_table(square_cell_mesh, 2.0, 8, estimate_error=False)
    with pytest.raises(ConfigMismatch):
        run_macro(mesh16, MacroRunConfig(3.0, 1.0, 0.01, 0.02, 0.75, 2.0, table, zero(), zero()))
    with pytest.raises(ConfigMismatch):
        run_macro(mesh16, MacroRunConfig(3.0, 1.0, 0.01, 0.02, 0.75, 2.0, tensor, zero(), zero()))
    with pytest.raises(ConfigMismatch):
        run_macro(build_perforated_mesh(square_cell, epsilon=0.25, target_h=1 / 16),
                  MacroRunConfig(2.0, 1.0, 0.01, 0.02, 0.75, 2.0, tensor, zero(), zero()))
