import math

import numpy as np
import pytest

from plhom.errors import ConfigMismatch
from plhom.geometry import build_cell, build_perforated_mesh, measures
from plhom.micro import (MicroRunConfig, apriori_diagnostics, extend_into_holes, extension_gradient_ratio,
                         initial_field, profile, run_micro, surface_functional, uniform_bound_check)
from plhom.nonlinearity import cubic, linear, zero


@pytest.fixture(scope="module")
def cubic_run(request):
    cell = build_cell(2, "square")
    mesh = build_perforated_mesh(cell, epsilon=0.25, target_h=1.0 / 32)
    return run_micro(mesh, MicroRunConfig(2.0, 1.0, 0.25, 1e-2, 0.1, cubic(), linear()))


def test_profile_rejects_unknown_names():
    with pytest.raises(ValueError):
        profile("__import__('os')")
    assert profile("x*y")(np.array([2.0]), np.array([3.0]))[0] == 6.0


def test_initial_data_must_vanish(perforated16):
    with pytest.raises(ConfigMismatch):
        initial_field(perforated16, "1 + x")


def test_zero_trajectory(perforated16):
    tr = run_micro(perforated16, MicroRunConfig(3.0, 1.0, 0.25, 0.05, 0.1, cubic(), linear(), initial="0"))
    assert all(np.all(s.bulk == 0) for s in tr.states)
    assert np.all(tr.energy_residual[1:] == 0)


def test_dissipation_of_cubic_run(cubic_run):
    assert cubic_run.dissipation_checked and cubic_run.dissipation_ok
    assert np.all(np.diff(cubic_run.h_norm) <= 0)


def test_trace_and_dirichlet(cubic_run):
    m = cubic_run.mesh
    for s in cubic_run.states:
        assert np.all(s.bulk[m.outer_nodes] == 0)
        assert np.array_equal(s.trace, s.bulk[m.hole_nodes])


def test_epsilon_mismatch(perforated16):
    with pytest.raises(ConfigMismatch):
        run_micro(perforated16, MicroRunConfig(2.0, 1.0, 0.125, 0.05, 0.1, zero(), zero()))


def test_p3_run_converges(perforated16):
    tr = run_micro(perforated16, MicroRunConfig(3.0, 1.0, 0.25, 0.02, 0.06, cubic(), linear()))
    assert all(r.converged for r in tr.newton_reports)
    assert tr.dissipation_ok


def test_extension_constant_and_linear(perforated16):
    m = perforated16
    ext = extend_into_holes(m, np.full(m.n_nodes, 0.3))
    assert np.allclose(ext, 0.3, atol=1e-13)
    x = m.nodes[:, 0]
    ext = extend_into_holes(m, x)
    assert np.allclose(ext, m.companion.nodes[:, 0], atol=1e-12)
    ext3 = extend_into_holes(m, x, p=3.0)
    assert np.allclose(ext3, m.companion.nodes[:, 0], atol=1e-9)


def test_extension_ratio_bounded(cubic_run):
    r = extension_gradient_ratio(cubic_run.mesh, cubic_run.states[-1].bulk)
    assert 1.0 <= r < 2.0


def test_apriori_zero_trajectory(perforated16):
    tr = run_micro(perforated16, MicroRunConfig(2.0, 1.0, 0.25, 0.05, 0.1, cubic(), linear(), initial="0"))
    rep = apriori_diagnostics(tr)
    assert rep.sup_norm == 0 and rep.integral_norm == 0 and rep.bound_residual <= 0


def test_apriori_energy_inequality(cubic_run):
    assert apriori_diagnostics(cubic_run).bound_residual <= 1e-9


def test_apriori_gradient_integral_linear_decay():
    cell = build_cell(2, None)
    mesh = build_perforated_mesh(cell, epsilon=1.0, target_h=1.0 / 32)
    T, dt = 0.1, 1e-3
    tr = run_micro(mesh, MicroRunConfig(2.0, 1.0, 1.0, dt, T, zero(), zero()))
    lam = 2 * math.pi ** 2 + 1
    exact = math.pi ** 2 / 2 * (1 - math.exp(-2 * lam * T)) / (2 * lam)
    assert abs(apriori_diagnostics(tr).grad_integral - exact) / exact < 0.01


def test_uniform_bounds_across_epsilon():
    cell = build_cell(2, "square")
    reps = []
    for eps in (0.25, 0.125, 0.0625):
        mesh = build_perforated_mesh(cell, epsilon=eps, target_h=eps / 4)
        reps.append(apriori_diagnostics(run_micro(mesh, MicroRunConfig(2.0, 1.0, eps, 0.05, 0.1, cubic(), linear()))))
    var, ok = uniform_bound_check(reps)
    assert ok, var


def test_surface_functional_values(square_cell):
    m4 = build_perforated_mesh(square_cell, epsilon=0.25, target_h=1 / 16)
    assert abs(surface_functional(m4, np.ones(m4.n_nodes)) - 2.0) < 1e-12
    assert surface_functional(m4, np.zeros(m4.n_nodes)) == 0.0
    m8 = build_perforated_mesh(square_cell, epsilon=0.125, target_h=1 / 32)
    assert abs(surface_functional(m8, m8.nodes[:, 0]) - 1.0) < 0.05
    assert abs(surface_functional(m8, lambda x, y: x) - 1.0) < 1e-12


def test_diagnostics_rows(cubic_run):
    rows = list(cubic_run.diagnostics_rows())
    assert len(rows) == len(cubic_run.states) and math.isnan(rows[0][3])
    assert cubic_run.state_at(0.05).time == pytest.approx(0.05)
