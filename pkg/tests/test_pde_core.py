import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from plhom.errors import DimensionMismatch, LinearSolveFailed, SingularRegularization
from plhom.geometry import build_cell, build_domain_mesh
from plhom.nonlinearity import cubic, linear, zero
from plhom.pde_core import (FieldState, LinearFlux, ParabolicOperator, PLaplaceFlux, TimeStepSystem,
                            assemble_jacobian, assemble_residual, energy_diagnostic, integrate, l2_error_to,
                            micro_operator, newton_solve)
from plhom.quadrature import simplex_rule


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("degree", [1, 2, 4, 7])
def test_quadrature_exact_on_monomials(dim, degree):
    lam, w = simplex_rule(dim, degree)
    assert np.all(w > 0) and abs(w.sum() - 1) < 1e-14
    # integral of lam_0^a lam_1^b over the simplex / volume
    for a in range(degree + 1):
        b = degree - a
        exact = math.factorial(a) * math.factorial(b) * math.factorial(dim) / math.factorial(a + b + dim)
        assert abs(w @ (lam[:, 0] ** a * lam[:, 1] ** b) - exact) < 1e-13


def test_flux_regularization():
    fl = PLaplaceFlux(3.0, 1e-8)
    G = np.zeros((2, 2))
    D = fl.derivative(G)
    assert np.all(np.isfinite(D)) and np.allclose(D, 1e-8 * np.eye(2))
    with pytest.raises(SingularRegularization):
        PLaplaceFlux(3.0, 0.0).derivative(G)


@settings(max_examples=40, deadline=None)
@given(st.floats(2, 4), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_flux_monotone_property(p, z):
    fl = PLaplaceFlux(p)
    z1, z2 = np.array(z[:2])[None], np.array(z[2:])[None]
    assert float(np.sum((fl(z1) - fl(z2)) * (z1 - z2))) >= -1e-12


def two_triangle_operator():
    m = build_domain_mesh(2, 1.0)  # one square, four triangles, five nodes
    return m, ParabolicOperator(m, PLaplaceFlux(2.0), 2.0, 0.0, zero(), zero())


def test_linear_residual_matches_hand_assembly():
    m, op = two_triangle_operator()
    free = ~op.fixed
    assert free.sum() == 1  # centre node
    i = np.flatnonzero(free)[0]
    # centre node of a unit square split in 4: stiffness 4, lumped-free mass 4 * (1/4)/6 = 1/6
    u, up, dt = np.zeros(5), np.zeros(5), 0.1
    u[i], up[i] = 1.0, 0.5
    r = assemble_residual(op, u, up, dt)
    assert abs(r[i] - ((1 / 6) * (u[i] - up[i]) / dt + 4 * u[i])) < 1e-12
    J = assemble_jacobian(op, u, dt).toarray()
    assert abs(J[i, i] - (1 / 6 / dt + 4)) < 1e-12


def test_zero_state_zero_residual(perforated16):
    op = micro_operator(perforated16, 3.0, 1.0, cubic(), linear())
    z = np.zeros(perforated16.n_nodes)
    assert np.all(assemble_residual(op, z, z, 0.01) == 0)


def test_constant_state_reaction_only():
    m = build_domain_mesh(2, 0.25)
    op = ParabolicOperator(m, PLaplaceFlux(3.0), 3.0, 2.0, zero(), zero())
    c = 0.7
    u = np.full(m.n_nodes, c)
    r = op.stationary_residual(u)
    rows = np.asarray(op.mass_matrix.sum(axis=1)).ravel()
    interior = ~op.fixed
    # every interior row integrates a full patch
    assert np.allclose(r[interior], 2.0 * c ** 2 * rows[interior], rtol=1e-8)


def test_dimension_mismatch(perforated16):
    op = micro_operator(perforated16, 2.0, 1.0, zero(), zero())
    with pytest.raises(DimensionMismatch):
        assemble_residual(op, np.zeros(perforated16.n_nodes), np.zeros(3), 0.1)


def test_p2_jacobian_state_independent(perforated16, rng):
    op = micro_operator(perforated16, 2.0, 1.0, zero(), linear())
    n = perforated16.n_nodes
    J1 = assemble_jacobian(op, rng.normal(size=n), 0.1)
    J2 = assemble_jacobian(op, rng.normal(size=n), 0.1)
    assert (J1 != J2).nnz == 0


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_jacobian_directional_fd_first_order(perforated16, rng, p):
    m = perforated16
    op = micro_operator(m, p, 1.0, cubic(), linear())
    x, y = m.nodes.T
    u = np.sin(np.pi * x) * np.sin(np.pi * y)
    up = 0.9 * u
    r0 = assemble_residual(op, u, up, 0.01)
    J = assemble_jacobian(op, u, 0.01)
    dirs = rng.normal(size=(5, m.n_nodes))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    errs = [max(np.linalg.norm((assemble_residual(op, u + h * d, up, 0.01) - r0) / h - J @ d) for d in dirs)
            for h in (1e-4, 1e-5)]
    if p == 2.0:
        assert max(errs) < 1e-7  # only the cubic reaction is curved, and weakly
    else:
        assert 0.05 < errs[1] / errs[0] < 0.2


def test_affine_newton_one_iteration(perforated16):
    op = micro_operator(perforated16, 2.0, 1.0, zero(), linear())
    x, y = perforated16.nodes.T
    u0 = np.sin(np.pi * x) * np.sin(np.pi * y)
    u0[op.fixed] = 0
    _, rep = newton_solve(TimeStepSystem(op, u0, 0.01), u0, 1e-10)
    assert rep.converged and rep.iterations == 1


def test_newton_returns_field_state(perforated16):
    op = micro_operator(perforated16, 2.0, 1.0, zero(), zero())
    s = FieldState(0.0, np.zeros(perforated16.n_nodes), perforated16.hole_nodes)
    out, rep = newton_solve(TimeStepSystem(op, s.bulk, 0.1), s, 1e-10)
    assert isinstance(out, FieldState) and rep.iterations == 0
    assert np.array_equal(out.trace, out.bulk[perforated16.hole_nodes])


class _Singular:
    fixed = np.array([True, False, False])
    affine = True

    def residual(self, u):
        return np.array([u[0], 1.0, 2.0])

    def jacobian(self, u):
        return sp.csr_matrix(np.array([[1.0, 0, 0], [0, 1.0, 1.0], [0, 1.0, 1.0]]))


def test_inconsistent_system_fails():
    with pytest.raises(LinearSolveFailed):
        newton_solve(_Singular(), np.zeros(3))


def test_energy_diagnostic_zero_trajectory(perforated16):
    op = micro_operator(perforated16, 3.0, 1.0, cubic(), linear())
    z = [np.zeros(perforated16.n_nodes)] * 4
    assert np.all(energy_diagnostic(op, z, 0.1) == 0)


def test_energy_diagnostic_first_order_on_exact_solution():
    m = build_domain_mesh(2, 1.0 / 64)
    op = ParabolicOperator(m, PLaplaceFlux(2.0), 2.0, 1.0, zero(), zero())
    x, y = m.nodes.T
    lam = 2 * np.pi ** 2 + 1
    maxima = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        states = [np.exp(-lam * n * dt) * np.sin(np.pi * x) * np.sin(np.pi * y) for n in range(round(0.1 / dt) + 1)]
        maxima.append(np.abs(energy_diagnostic(op, states, dt)).max())
    r = np.array(maxima[1:]) / np.array(maxima[:-1])
    # exact sampling makes the centred residual second order; it must decay at least at first order
    assert np.all(r <= 0.6)


def test_linear_decay_accuracy():
    m = build_domain_mesh(2, 1.0 / 32)
    op = ParabolicOperator(m, PLaplaceFlux(2.0), 2.0, 1.0, zero(), zero())
    x, y = m.nodes.T
    u0 = np.sin(np.pi * x) * np.sin(np.pi * y)
    states, _ = integrate(op, u0, 1e-3, 50)
    lam = 2 * np.pi ** 2 + 1
    err = l2_error_to(m, states[-1], lambda a, b: np.exp(-lam * 0.05) * np.sin(np.pi * a) * np.sin(np.pi * b))
    assert err < 5e-3


def test_linear_flux_derivative():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    fl = LinearFlux(A)
    G = np.array([[1.0, 2.0]])
    assert np.allclose(fl(G), G @ A.T) and np.allclose(fl.derivative(G)[0], A)
