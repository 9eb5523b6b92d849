"""
Periodic Poisson Solver

Solves the 5-point finite-difference Poisson equation -Lap_h(phi) = rhs on a
periodic node grid by diagonalizing the discrete operator with real FFTs, and
differentiates phi to the electric field with central differences.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft

from errors import PreconditionError, ShapeError, SolvabilityError
from particles import DIRICHLET, PERIODIC, FieldGrid2D

logger = logging.getLogger(__name__)

# Relative size of the RHS mean accepted as round-off
MEAN_TOL = 1e-12


@dataclass(frozen=True)
class PeriodicPoissonOp:
    """
    Discrete periodic Laplacian on n[0] x n[1] nodes

    With `neutralize` set, a uniform background equal to minus the mean
    charge density is added to the RHS so the problem is solvable.
    """
    n: tuple
    spacing: tuple
    neutralize: bool = True

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        spacing = tuple(float(v) for v in self.spacing)
        if len(n) != 2 or any(v < 4 or v % 2 for v in n):
            raise PreconditionError(f"Periodic grid needs an even node count >= 4 per dimension, got {n}")
        if len(spacing) != 2 or any(h <= 0 for h in spacing):
            raise PreconditionError(f"Grid spacing must be positive, got {spacing}")
        object.__setattr__(self, 'n', n)
        object.__setattr__(self, 'spacing', spacing)

    def symbol(self) -> np.ndarray:
        """Eigenvalues of -Lap_h for the rfft2 frequency layout"""
        nx, ny = self.n
        hx, hy = self.spacing
        m = np.arange(nx)[:, None]
        p = np.arange(ny // 2 + 1)[None, :]
        return ((2.0 - 2.0 * np.cos(2.0 * np.pi * m / nx)) / hx**2
                + (2.0 - 2.0 * np.cos(2.0 * np.pi * p / ny)) / hy**2)

    def empty_grid(self, origin=(0.0, 0.0), vector: bool = False) -> FieldGrid2D:
        return FieldGrid2D.zeros(self.n, self.spacing, origin, PERIODIC, vector)


def assemble_rhs(op: PeriodicPoissonOp, rho: FieldGrid2D, species_sign: int = 0) -> FieldGrid2D:
    """Right-hand side (-1)**s * rho plus the neutralizing background when enabled"""
    values = (-1.0) ** species_sign * rho.values
    if op.neutralize:
        background = -float(np.mean(values))
        values = values + background
    return rho.with_values(values)


def solve_periodic(op: PeriodicPoissonOp, rhs: FieldGrid2D) -> FieldGrid2D:
    """
    Solve -Lap_h(phi) = rhs with mean(phi) = 0

    Args:
        op: Periodic operator
        rhs: Scalar right-hand side on the operator's grid

    Returns:
        Scalar FieldGrid2D phi
    """
    values = np.asarray(rhs.values, dtype=float)
    if values.shape != op.n:
        raise ShapeError(f"RHS of shape {values.shape} does not match operator grid {op.n}")

    mean = float(np.mean(values))
    scale = max(float(np.max(np.abs(values))) if values.size else 0.0, 1.0)
    if abs(mean) > MEAN_TOL * scale:
        if not op.neutralize:
            raise SolvabilityError(f"Periodic RHS has nonzero mean {mean:.3e}; enable the neutralizing background")
        values = values - mean

    spectrum = fft.rfft2(values)
    lam = op.symbol()
    lam[0, 0] = 1.0
    spectrum /= lam
    # Gauge: zero mean potential
    spectrum[0, 0] = 0.0
    phi = fft.irfft2(spectrum, s=op.n)
    return rhs.with_values(phi)


def apply_laplacian(phi: FieldGrid2D) -> np.ndarray:
    """
    Apply the 5-point operator -Lap_h

    Periodic grids wrap; on Dirichlet grids only interior nodes are filled and
    boundary nodes are returned as zero.
    """
    hx, hy = phi.spacing
    f = phi.values
    if phi.bc_kind == PERIODIC:
        return ((2 * f - np.roll(f, 1, axis=0) - np.roll(f, -1, axis=0)) / hx**2
                + (2 * f - np.roll(f, 1, axis=1) - np.roll(f, -1, axis=1)) / hy**2)
    out = np.zeros_like(f)
    out[1:-1, 1:-1] = ((2 * f[1:-1, 1:-1] - f[:-2, 1:-1] - f[2:, 1:-1]) / hx**2
                       + (2 * f[1:-1, 1:-1] - f[1:-1, :-2] - f[1:-1, 2:]) / hy**2)
    return out


def compute_E(phi: FieldGrid2D, spacing=None) -> FieldGrid2D:
    """
    Electric field E = -grad(phi) by central differences

    Periodic grids wrap around. Non-periodic grids use central differences at
    interior nodes and second-order one-sided differences on the boundary.
    """
    hx, hy = phi.spacing if spacing is None else spacing
    f = phi.values
    if phi.bc_kind == PERIODIC:
        ex = (np.roll(f, 1, axis=0) - np.roll(f, -1, axis=0)) / (2 * hx)
        ey = (np.roll(f, 1, axis=1) - np.roll(f, -1, axis=1)) / (2 * hy)
    else:
        ex = -np.gradient(f, hx, axis=0, edge_order=2)
        ey = -np.gradient(f, hy, axis=1, edge_order=2)
    return FieldGrid2D(phi.n, phi.spacing, phi.origin, np.stack([ex, ey], axis=-1), phi.bc_kind)


def solve_field(op: PeriodicPoissonOp, rho: FieldGrid2D, species_sign: int = 0) -> FieldGrid2D:
    """Charge density to electric field on the periodic grid"""
    phi = solve_periodic(op, assemble_rhs(op, rho, species_sign))
    return compute_E(phi)
