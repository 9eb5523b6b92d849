"""
Tests for the periodic Poisson solver
"""

import numpy as np
import pytest

from errors import PreconditionError, ShapeError, SolvabilityError
from particles import DIRICHLET, PERIODIC, FieldGrid2D
from poisson_periodic import PeriodicPoissonOp, apply_laplacian, assemble_rhs, compute_E, solve_field, solve_periodic


def periodic_grid(values, spacing=(1.0, 1.0)):
    values = np.asarray(values, dtype=float)
    return FieldGrid2D(values.shape[:2], spacing, (0.0, 0.0), values, PERIODIC)


def test_discrete_eigenfunction():
    op = PeriodicPoissonOp((4, 4), (1.0, 1.0))
    j = np.arange(4)
    rhs = np.cos(2 * np.pi * j / 4)[:, None] * np.ones((1, 4))
    phi = solve_periodic(op, periodic_grid(rhs))
    np.testing.assert_allclose(phi.values, rhs / 2, atol=1e-14)


def test_zero_rhs():
    op = PeriodicPoissonOp((8, 6), (0.5, 0.25))
    phi = solve_periodic(op, periodic_grid(np.zeros((8, 6)), (0.5, 0.25)))
    np.testing.assert_array_equal(phi.values, 0.0)


def test_nonzero_mean_needs_background():
    op = PeriodicPoissonOp((4, 4), (1.0, 1.0), neutralize=False)
    with pytest.raises(SolvabilityError):
        solve_periodic(op, periodic_grid(np.ones((4, 4))))


def test_neutralizing_background_removes_mean():
    op = PeriodicPoissonOp((4, 4), (1.0, 1.0))
    rhs = assemble_rhs(op, periodic_grid(np.full((4, 4), 2.5)))
    np.testing.assert_allclose(rhs.values, 0.0, atol=1e-15)


def test_solution_has_zero_mean_and_small_residual():
    rng = np.random.default_rng(7)
    rhs = rng.normal(size=(16, 12))
    rhs -= rhs.mean()
    op = PeriodicPoissonOp((16, 12), (0.3, 0.2))
    phi = solve_periodic(op, periodic_grid(rhs, (0.3, 0.2)))
    assert abs(phi.values.mean()) < 1e-13
    np.testing.assert_allclose(apply_laplacian(phi), rhs, atol=1e-10)


def test_manufactured_solution_second_order():
    errors = []
    for n in (16, 32):
        h = 2 * np.pi / n
        op = PeriodicPoissonOp((n, n), (h, h))
        x = np.arange(n) * h
        exact = np.sin(x)[:, None] * np.cos(2 * x)[None, :]
        phi = solve_periodic(op, periodic_grid(5.0 * exact, (h, h)))
        errors.append(np.max(np.abs(phi.values - exact)))
    order = np.log2(errors[0] / errors[1])
    assert 1.9 <= order <= 2.1


def test_constant_potential_has_no_field():
    E = compute_E(periodic_grid(np.full((4, 6), 3.0)))
    np.testing.assert_array_equal(E.values, 0.0)


def test_central_difference_stencil():
    phi = np.array([0.0, 1.0, 0.0, -1.0])[:, None] * np.ones((1, 4))
    E = compute_E(periodic_grid(phi))
    assert E.values[0, 0, 0] == pytest.approx(-1.0)
    np.testing.assert_allclose(E.values[..., 1], 0.0)


def test_linear_potential_on_dirichlet_patch():
    patch = FieldGrid2D.zeros((5, 4), (0.5, 0.5), origin=(-1.0, 0.0), bc_kind=DIRICHLET)
    xs, _ = patch.mesh()
    E = compute_E(patch.with_values(xs))
    np.testing.assert_allclose(E.values[..., 0], -1.0, atol=1e-13)
    np.testing.assert_allclose(E.values[..., 1], 0.0, atol=1e-13)


def test_species_sign_flips_field():
    n, h = 16, 2 * np.pi / 16
    op = PeriodicPoissonOp((n, n), (h, h))
    x = np.arange(n) * h
    rho = periodic_grid(1.0 + 0.1 * np.cos(x)[:, None] * np.ones((1, n)), (h, h))
    positive = solve_field(op, rho, species_sign=0)
    negative = solve_field(op, rho, species_sign=1)
    np.testing.assert_allclose(negative.values, -positive.values, atol=1e-14)
    # Gauss: E_x = 0.1 sin(x) for the continuous problem
    np.testing.assert_allclose(positive.values[:, 0, 0], 0.1 * np.sin(x), atol=5e-3)


def test_operator_validation():
    with pytest.raises(PreconditionError):
        PeriodicPoissonOp((5, 4), (1.0, 1.0))
    with pytest.raises(PreconditionError):
        PeriodicPoissonOp((2, 4), (1.0, 1.0))
    op = PeriodicPoissonOp((4, 4), (1.0, 1.0))
    with pytest.raises(ShapeError):
        solve_periodic(op, periodic_grid(np.zeros((6, 4))))


def reflect(values, axis):
    """Index map i -> -i (mod n) along one axis"""
    return np.roll(np.flip(values, axis), 1, axis)


@pytest.mark.parametrize('axis', [0, 1])
def test_symmetric_charge_gives_symmetric_potential(axis):
    rng = np.random.default_rng(5)
    rhs = rng.normal(size=(12, 10))
    rhs = rhs + reflect(rhs, axis)
    rhs -= rhs.mean()
    op = PeriodicPoissonOp((12, 10), (0.4, 0.25))
    phi = solve_periodic(op, periodic_grid(rhs, (0.4, 0.25))).values
    np.testing.assert_allclose(reflect(phi, axis), phi, atol=1e-12 * np.abs(phi).max())


def test_shifted_charge_gives_shifted_potential():
    rng = np.random.default_rng(9)
    rhs = rng.normal(size=(12, 10))
    rhs -= rhs.mean()
    op = PeriodicPoissonOp((12, 10), (0.4, 0.25))
    phi = solve_periodic(op, periodic_grid(rhs, (0.4, 0.25))).values
    moved = solve_periodic(op, periodic_grid(np.roll(rhs, (3, -2), (0, 1)), (0.4, 0.25))).values
    np.testing.assert_allclose(moved, np.roll(phi, (3, -2), (0, 1)), atol=1e-12 * np.abs(phi).max())
