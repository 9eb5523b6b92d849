"""
Tests for the Dirichlet and free-space Poisson solvers
"""

import numpy as np
import pytest
from scipy import special

from errors import PreconditionError, ShapeError, SingularKernelError
from particles import DIRICHLET, FieldGrid2D
from poisson_freespace import (DirichletDomain, FreeSpacePoissonSolver, SurfaceCharge, boundary_convolution,
                               greens_function, lattice_correction, solve_dirichlet, solve_freespace,
                               surface_charge)


def gaussian_charge(n=129, half_width=2.0, sigma=0.1, center=(0.0, 0.0)):
    h = 2 * half_width / (n - 1)
    xs = -half_width + np.arange(n) * h
    X, Y = np.meshgrid(xs, xs, indexing='ij')
    rho = np.exp(-((X - center[0])**2 + (Y - center[1])**2) / (2 * sigma**2))
    rho /= rho.sum() * h * h
    return rho, h, (-half_width, -half_width)


def node_index(grid: FieldGrid2D, point):
    return tuple(int(v) for v in np.rint((np.asarray(point) - np.array(grid.origin)) / np.array(grid.spacing)))


def test_dirichlet_zero_problem():
    dom = DirichletDomain((6, 5), (0.5, 0.5), (0.0, 0.0))
    np.testing.assert_array_equal(solve_dirichlet(dom, np.zeros(dom.shape)), 0.0)


def test_dirichlet_linear_boundary_is_exact():
    dom = DirichletDomain((7, 9), (0.25, 0.125), (-1.0, 0.5))
    X, Y = dom.mesh()
    boundary = 2.0 * X - Y
    phi = solve_dirichlet(dom, np.zeros(dom.shape), boundary)
    np.testing.assert_allclose(phi, boundary, atol=1e-12)


def test_dirichlet_manufactured_solution():
    errors = []
    for m in (15, 31):
        h = 1.0 / (m + 1)
        dom = DirichletDomain((m, m), (h, h), (0.0, 0.0))
        X, Y = dom.mesh()
        exact = np.sin(np.pi * X) * np.sin(np.pi * Y)
        phi = solve_dirichlet(dom, 2 * np.pi**2 * exact)
        errors.append(np.max(np.abs(phi - exact)))
    assert 1.9 <= np.log2(errors[0] / errors[1]) <= 2.1


def test_dirichlet_shape_checks():
    dom = DirichletDomain((4, 4), (1.0, 1.0), (0.0, 0.0))
    with pytest.raises(ShapeError):
        solve_dirichlet(dom, np.zeros((4, 4)))
    with pytest.raises(PreconditionError):
        DirichletDomain((0, 4), (1.0, 1.0), (0.0, 0.0))


def test_surface_charge_matches_enclosed_charge():
    rho, h, origin = gaussian_charge(n=65, half_width=1.0)
    dom = DirichletDomain((63, 63), (h, h), origin)
    rhs = rho.copy()
    rhs[dom.ring_mask()] = 0.0
    layer = surface_charge(dom, solve_dirichlet(dom, rhs))
    assert layer.total == pytest.approx(rhs.sum() * h * h, rel=1e-10)
    assert layer.total == pytest.approx(1.0, rel=1e-3)
    assert layer.weights.sum() == pytest.approx(dom.perimeter, rel=1e-14)


def test_surface_charge_is_the_ring_residual():
    dom = DirichletDomain((9, 7), (0.25, 0.5), (0.0, 0.0))
    rng = np.random.default_rng(2)
    phi = np.zeros(dom.shape)
    phi[1:-1, 1:-1] = rng.uniform(size=dom.n)
    padded = np.pad(phi, 1)
    hx, hy = dom.spacing
    residual = ((2 * padded[1:-1, 1:-1] - padded[2:, 1:-1] - padded[:-2, 1:-1]) / hx**2
                + (2 * padded[1:-1, 1:-1] - padded[1:-1, 2:] - padded[1:-1, :-2]) / hy**2)
    layer = surface_charge(dom, phi)
    # every ring node appears once, corners twice with no charge
    assert layer.total == pytest.approx(-residual[dom.ring_mask()].sum() * hx * hy, rel=1e-13)
    assert layer.total == pytest.approx(residual[1:-1, 1:-1].sum() * hx * hy, rel=1e-12)


def test_surface_charge_needs_vanishing_boundary():
    dom = DirichletDomain((4, 4), (1.0, 1.0), (0.0, 0.0))
    with pytest.raises(PreconditionError):
        surface_charge(dom, np.ones(dom.shape))


def test_greens_function():
    assert greens_function(1.0) == 0.0
    assert greens_function(np.e) == pytest.approx(-1.0 / (2 * np.pi))


def test_boundary_convolution_point_source():
    src = SurfaceCharge(np.array([[0.0, 0.0]]), np.array([2.0]), np.array([0.5]))
    values = boundary_convolution(src, np.array([[2.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(values, [-np.log(2.0) / (2 * np.pi), 0.0], atol=1e-15)


def test_boundary_convolution_coincident_target():
    src = SurfaceCharge(np.array([[0.0, 0.0], [1.0, 0.0]]), np.ones(2), np.ones(2))
    with pytest.raises(SingularKernelError):
        boundary_convolution(src, np.array([[0.5, 0.5], [1.0, 0.0]]))


def test_boundary_convolution_worker_independent():
    rng = np.random.default_rng(3)
    src = SurfaceCharge(rng.uniform(-1, 1, (40, 2)), rng.normal(size=40), np.full(40, 0.1))
    targets = rng.uniform(2, 3, (3000, 2))
    np.testing.assert_array_equal(boundary_convolution(src, targets, workers=1),
                                  boundary_convolution(src, targets, workers=3))


def test_freespace_far_field():
    rho, h, origin = gaussian_charge()
    solver = FreeSpacePoissonSolver(rho.shape, (h, h), origin)
    phi = solver.solve(rho)
    drop = phi.values[node_index(phi, (1.0, 0.0))] - phi.values[node_index(phi, (2.0, 0.0))]
    assert drop == pytest.approx(np.log(2.0) / (2 * np.pi), rel=1e-2)
    # radial symmetry
    assert phi.values[node_index(phi, (0.0, 1.0))] == pytest.approx(phi.values[node_index(phi, (1.0, 0.0))], rel=1e-6)


def test_freespace_independent_of_outer_padding():
    rho, h, origin = gaussian_charge(n=65, half_width=1.0)
    near = FreeSpacePoissonSolver(rho.shape, (h, h), origin, outer_pad=(16, 16))
    far = FreeSpacePoissonSolver(rho.shape, (h, h), origin, outer_pad=(32, 32))
    phi_near = near.solve(rho).values[near._d0_in_d2]
    phi_far = far.solve(rho).values[far._d0_in_d2]
    center = (32, 32)
    phi_near = phi_near - phi_near[center]
    phi_far = phi_far - phi_far[center]
    assert np.max(np.abs(phi_near - phi_far)) <= 1e-6 * np.max(np.abs(phi_far))


def test_lattice_correction_shape():
    delta = np.array([[4.0, 0.0], [0.0, 4.0], [2.0, 2.0]])
    square = lattice_correction(delta, (0.5, 0.5))
    np.testing.assert_allclose(square, [0.25 / (24 * np.pi * 16), 0.25 / (24 * np.pi * 16),
                                        -0.25 / (24 * np.pi * 8)], rtol=1e-14)
    # the cos 2t part flips sign with the axes of an anisotropic lattice
    wide = lattice_correction(delta[:2], (0.5, 0.25))
    swapped = lattice_correction(delta[:2, ::-1], (0.25, 0.5))
    np.testing.assert_allclose(wide, swapped, rtol=1e-14)
    assert wide[0] != wide[1]


def test_freespace_is_linear():
    rho_a, h, origin = gaussian_charge(n=33, half_width=1.0, sigma=0.15, center=(0.1, -0.2))
    rho_b, _, _ = gaussian_charge(n=33, half_width=1.0, sigma=0.2, center=(-0.25, 0.05))
    solver = FreeSpacePoissonSolver(rho_a.shape, (h, h), origin)
    combined = solver.solve(2.5 * rho_a - 0.75 * rho_b).values
    separate = 2.5 * solver.solve(rho_a).values - 0.75 * solver.solve(rho_b).values
    np.testing.assert_allclose(combined, separate, rtol=0, atol=1e-12 * np.max(np.abs(combined)))


def test_freespace_translates_with_the_charge():
    rho, h, origin = gaussian_charge(n=65, half_width=1.0)
    moved, _, _ = gaussian_charge(n=65, half_width=1.0, center=(3 * h, -2 * h))
    solver = FreeSpacePoissonSolver(rho.shape, (h, h), origin, outer_pad=(32, 32))
    phi = solver.solve(rho).values
    phi_moved = solver.solve(moved).values
    # compare on the nodes whose shifted partner lies in D2 too
    difference = phi_moved[3:, :-2] - phi[:-3, 2:]
    difference -= difference.mean()
    assert np.max(np.abs(difference)) <= 1e-6 * np.max(np.abs(phi))


def test_freespace_mesh_convergence():
    sigma, half_width = 0.5, 3.0
    errors = []
    for n in (25, 49, 97):
        rho, h, origin = gaussian_charge(n=n, half_width=half_width, sigma=sigma)
        solver = FreeSpacePoissonSolver(rho.shape, (h, h), origin)
        phi = solver.solve(rho).values[solver._d0_in_d2]
        stride = (n - 1) // 24
        phi = phi[::stride, ::stride]
        xs = -half_width + np.arange(25) * 0.25
        X, Y = np.meshgrid(xs, xs, indexing='ij')
        r = np.hypot(X, Y)
        with np.errstate(divide='ignore', invalid='ignore'):
            exact = np.where(r > 0, -(np.log(r) + 0.5 * special.exp1(r**2 / (2 * sigma**2))) / (2 * np.pi),
                             -(0.5 * np.log(2 * sigma**2) - 0.5 * np.euler_gamma) / (2 * np.pi))
        reference = (18, 12)
        errors.append(np.max(np.abs((phi - phi[reference]) - (exact - exact[reference]))))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.8)


def test_freespace_field_is_radial():
    rho, h, origin = gaussian_charge()
    solver = FreeSpacePoissonSolver(rho.shape, (h, h), origin)
    E = solver.field(FieldGrid2D(rho.shape, (h, h), origin, rho, DIRICHLET))
    assert E.values.shape == rho.shape + (2,)
    i, j = node_index(E, (1.0, 0.0))
    assert E.values[i, j, 0] == pytest.approx(1.0 / (2 * np.pi), rel=2e-2)
    assert abs(E.values[i, j, 1]) < 1e-6
    center = node_index(E, (0.0, 0.0))
    np.testing.assert_allclose(E.values[center], 0.0, atol=1e-8)


def test_solver_validation():
    with pytest.raises(PreconditionError):
        FreeSpacePoissonSolver((9, 9), (1.0, 1.0), (0.0, 0.0), inner_pad=0)
    solver = FreeSpacePoissonSolver((9, 9), (1.0, 1.0), (0.0, 0.0))
    with pytest.raises(ShapeError):
        solver.solve(np.zeros((8, 9)))


def test_solve_freespace_convenience():
    rho, h, origin = gaussian_charge(n=33, half_width=1.0, sigma=0.2)
    grid = FieldGrid2D(rho.shape, (h, h), origin, rho, DIRICHLET)
    phi = solve_freespace(grid, outer_pad=(4, 4))
    assert phi.n == (33 + 4 + 8, 33 + 4 + 8)
    assert phi.bc_kind == DIRICHLET


def test_surface_charge_of_edge_ramp():
    dom = DirichletDomain((6, 6), (0.5, 0.5), (0.0, 0.0))
    phi = np.zeros(dom.shape)
    phi[-2, 3] = 0.5
    phi[-3, 3] = 1.0
    layer = surface_charge(dom, phi)
    right_edge = dom.shape[1]
    assert layer.strengths[right_edge + 3] == pytest.approx(1.0)
    assert layer.strengths[right_edge + 2] == 0.0
    zero = surface_charge(dom, np.zeros(dom.shape))
    np.testing.assert_array_equal(zero.strengths, 0.0)


def test_boundary_convolution_symmetric_sources():
    pair = SurfaceCharge(np.array([[-1.0, 0.0], [1.0, 0.0]]), np.ones(2), np.ones(2))
    one = SurfaceCharge(np.array([[1.0, 0.0]]), np.ones(1), np.ones(1))
    target = np.array([[0.0, 1.0]])
    assert boundary_convolution(pair, target)[0] == pytest.approx(2 * boundary_convolution(one, target)[0])


def test_freespace_zero_charge():
    grid = FieldGrid2D.zeros((17, 17), (0.1, 0.1), (-0.8, -0.8), DIRICHLET)
    np.testing.assert_array_equal(solve_freespace(grid).values, 0.0)
