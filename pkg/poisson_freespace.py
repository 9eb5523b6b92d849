"""
Free-Space Poisson Solver

Infinite-domain solution of the 2D Poisson equation by the James method:
a homogeneous Dirichlet solve on a slightly enlarged box, extraction of the
equivalent surface charge on its boundary, a boundary-to-boundary convolution
with the logarithmic Green's function onto a larger box, and a final
inhomogeneous Dirichlet solve on the larger box.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import fft

import parallel
from errors import PreconditionError, ShapeError, SingularKernelError
from particles import DIRICHLET, FieldGrid2D
from poisson_periodic import compute_E

logger = logging.getLogger(__name__)

# Distances below this fraction of the grid spacing count as coincident
COINCIDENT_TOL = 1e-12
BOUNDARY_TOL = 1e-12
TARGET_CHUNK = 1024


@dataclass(frozen=True)
class DirichletDomain:
    """
    Rectangle of (n[0] + 2) x (n[1] + 2) nodes

    `origin` is the lower-left boundary node; the outer ring of nodes carries
    the Dirichlet values and the n interior nodes are unknowns.
    """
    n: Tuple[int, int]
    spacing: Tuple[float, float]
    origin: Tuple[float, float]

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        if len(n) != 2 or any(v < 1 for v in n):
            raise PreconditionError(f"Dirichlet domain needs >= 1 interior node per dimension, got {n}")
        if any(h <= 0 for h in self.spacing):
            raise PreconditionError(f"Grid spacing must be positive, got {self.spacing}")
        object.__setattr__(self, 'n', n)
        object.__setattr__(self, 'spacing', tuple(float(h) for h in self.spacing))
        object.__setattr__(self, 'origin', tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n[0] + 2, self.n[1] + 2

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.origin) + (np.array(self.n) + 1) * np.array(self.spacing)

    @property
    def perimeter(self) -> float:
        width, height = self.upper - np.array(self.origin)
        return 2.0 * (width + height)

    def contains(self, lo, hi) -> bool:
        """True when [lo, hi] lies strictly inside the boundary ring"""
        return bool(np.all(np.array(self.origin) < np.asarray(lo)) and np.all(np.asarray(hi) < self.upper))

    def grown(self, cells: Tuple[int, int]) -> 'DirichletDomain':
        spacing = np.array(self.spacing)
        return DirichletDomain(tuple(np.array(self.n) + 2 * np.array(cells)), self.spacing,
                               tuple(np.array(self.origin) - np.array(cells) * spacing))

    def ring_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        mask[1:-1, 1:-1] = False
        return mask

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + np.arange(self.shape[0]) * self.spacing[0]
        ys = self.origin[1] + np.arange(self.shape[1]) * self.spacing[1]
        return np.meshgrid(xs, ys, indexing='ij')

    def as_grid(self, values: np.ndarray) -> FieldGrid2D:
        return FieldGrid2D(self.shape, self.spacing, self.origin, values, DIRICHLET)


@dataclass
class SurfaceCharge:
    """Samples (position, strength, arc weight) of a single-layer density"""
    positions: np.ndarray
    strengths: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.strengths.size

    @property
    def total(self) -> float:
        return float(np.dot(self.strengths, self.weights))


def solve_dirichlet(dom: DirichletDomain, rhs: np.ndarray, boundary: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Solve -Lap_h(phi) = rhs inside the domain with phi = boundary on the ring

    Args:
        dom: Dirichlet domain
        rhs: Node array of dom.shape; only interior values are used
        boundary: Node array of dom.shape whose ring holds the edge values (None for zero)

    Returns:
        phi on all nodes of dom.shape
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != dom.shape:
        raise ShapeError(f"RHS of shape {rhs.shape} does not match Dirichlet domain {dom.shape}")
    if boundary is not None:
        boundary = np.asarray(boundary, dtype=float)
        if boundary.shape != dom.shape:
            raise ShapeError(f"Boundary values of shape {boundary.shape} do not match Dirichlet domain {dom.shape}")

    hx, hy = dom.spacing
    mx, my = dom.n
    b = rhs[1:-1, 1:-1].copy()
    if boundary is not None:
        b[0, :] += boundary[0, 1:-1] / hx**2
        b[-1, :] += boundary[-1, 1:-1] / hx**2
        b[:, 0] += boundary[1:-1, 0] / hy**2
        b[:, -1] += boundary[1:-1, -1] / hy**2

    lam_x = (2.0 - 2.0 * np.cos(np.pi * np.arange(1, mx + 1) / (mx + 1))) / hx**2
    lam_y = (2.0 - 2.0 * np.cos(np.pi * np.arange(1, my + 1) / (my + 1))) / hy**2
    coeffs = fft.dstn(b, type=1) / (lam_x[:, None] + lam_y[None, :])

    phi = np.zeros(dom.shape) if boundary is None else boundary.copy()
    phi[1:-1, 1:-1] = fft.idstn(coeffs, type=1)
    return phi


def surface_charge(dom: DirichletDomain, phi: np.ndarray) -> SurfaceCharge:
    """
    Single-layer density equivalent to a potential that vanishes on the ring

    Extending phi by zero beyond the ring, the 5-point operator leaves a
    residual only on the ring nodes; its charge at an edge node is
    phi_inward * h_edge / h_normal. Strengths are that charge per unit edge
    length (minus the one-sided outward normal derivative), so the samples
    carry exactly the charge enclosed by the discrete solve. Corners get
    half the node spacing and no charge.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != dom.shape:
        raise ShapeError(f"Potential of shape {phi.shape} does not match Dirichlet domain {dom.shape}")
    ring = phi[dom.ring_mask()]
    scale = max(1.0, float(np.max(np.abs(phi))))
    if np.max(np.abs(ring)) > BOUNDARY_TOL * scale:
        raise PreconditionError(f"Potential does not vanish on the boundary (max {np.max(np.abs(ring)):.3e})")

    hx, hy = dom.spacing
    xs = dom.origin[0] + np.arange(dom.shape[0]) * hx
    ys = dom.origin[1] + np.arange(dom.shape[1]) * hy
    edges = [
        # (positions, inward neighbor values, normal spacing, spacing along the edge)
        (np.column_stack([np.full_like(ys, xs[0]), ys]), phi[1], hx, hy),
        (np.column_stack([np.full_like(ys, xs[-1]), ys]), phi[-2], hx, hy),
        (np.column_stack([xs, np.full_like(xs, ys[0])]), phi[:, 1], hy, hx),
        (np.column_stack([xs, np.full_like(xs, ys[-1])]), phi[:, -2], hy, hx),
    ]
    positions, strengths, weights = [], [], []
    for points, inward, normal, along in edges:
        w = np.full(points.shape[0], along)
        w[[0, -1]] = 0.5 * along
        density = inward / normal
        density[[0, -1]] = 0.0
        positions.append(points)
        strengths.append(density)
        weights.append(w)
    return SurfaceCharge(np.concatenate(positions), np.concatenate(strengths), np.concatenate(weights))


def greens_function(r):
    """2D free-space Green's function -ln(r) / (2 pi)"""
    return -np.log(r) / (2.0 * np.pi)


def lattice_correction(delta: np.ndarray, spacing) -> np.ndarray:
    """
    Leading far-field difference between the 5-point lattice Green's function and -ln(r) / (2 pi)

    For node spacing (hx, hy) the difference beyond an additive constant is
    ((hx^2 + hy^2) cos 4t - 2 (hx^2 - hy^2) cos 2t) / (48 pi r^2) at polar
    offset (r, t); the next term falls off as r^-4.
    """
    hx, hy = spacing
    r2 = delta[..., 0] ** 2 + delta[..., 1] ** 2
    cos2 = (delta[..., 0] ** 2 - delta[..., 1] ** 2) / r2
    cos4 = 2.0 * cos2**2 - 1.0
    return ((hx**2 + hy**2) * cos4 - 2.0 * (hx**2 - hy**2) * cos2) / (48.0 * np.pi * r2)


def boundary_convolution(src: SurfaceCharge, targets: np.ndarray, workers: int = 1,
                         spacing: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """
    Potential of a surface charge at target points by direct summation

    Args:
        src: Surface charge samples
        targets: Array (M, 2) of target positions
        workers: Threads over target chunks
        spacing: Lattice spacing of sources and targets; when given the
                 kernel carries the lattice correction

    Returns:
        Array (M,) of potential values
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    sources = src.positions
    charge = src.strengths * src.weights
    extent = np.ptp(np.concatenate([sources, targets]), axis=0).max() if len(src) else 1.0
    tol = COINCIDENT_TOL * max(extent, 1.0)

    def convolve(piece: slice) -> np.ndarray:
        delta = targets[piece, None, :] - sources[None, :, :]
        r = np.hypot(delta[..., 0], delta[..., 1])
        if np.any(r <= tol):
            hit = targets[piece][np.argmax(np.any(r <= tol, axis=1))]
            raise SingularKernelError(f"Target {tuple(hit)} coincides with a surface-charge sample")
        kernel = greens_function(r)
        if spacing is not None:
            kernel = kernel + lattice_correction(delta, spacing)
        return kernel @ charge

    return parallel.map_chunks(convolve, targets.shape[0], workers, TARGET_CHUNK)


class FreeSpacePoissonSolver:
    """
    James solver for charge deposited on a node grid D0

    D1 grows D0 by `inner_pad` cells per side; D2 grows D1 by `outer_pad`
    cells per side (n // 4 by default).
    """

    def __init__(self, n, spacing, origin, inner_pad: int = 2, outer_pad: Optional[Tuple[int, int]] = None,
                 workers: int = 1):
        """
        Args:
            n: Nodes of the charge grid D0 per dimension
            spacing: Node spacing
            origin: Position of the first D0 node
            inner_pad: Cells between D0 and the boundary of D1
            outer_pad: Cells between the boundaries of D1 and D2
            workers: Threads for the boundary convolution
        """
        self.n0 = tuple(int(v) for v in n)
        self.spacing = tuple(float(h) for h in spacing)
        self.origin0 = tuple(float(o) for o in origin)
        if inner_pad < 1:
            raise PreconditionError(f"Inner padding must be at least one cell, got {inner_pad}")
        if outer_pad is None:
            outer_pad = (max(1, self.n0[0] // 4), max(1, self.n0[1] // 4))
        self.inner_pad = int(inner_pad)
        self.outer_pad = tuple(int(p) for p in outer_pad)
        if any(p < 1 for p in self.outer_pad):
            raise PreconditionError(f"Outer padding must be at least one cell, got {self.outer_pad}")
        self.workers = workers

        h = np.array(self.spacing)
        d1_origin = np.array(self.origin0) - self.inner_pad * h
        self.d1 = DirichletDomain(tuple(np.array(self.n0) + 2 * (self.inner_pad - 1)), self.spacing, tuple(d1_origin))
        self.d2 = self.d1.grown(self.outer_pad)
        lo0 = np.array(self.origin0)
        hi0 = lo0 + (np.array(self.n0) - 1) * h
        if not (self.d1.contains(lo0, hi0) and self.d2.contains(self.d1.origin, self.d1.upper - 0.5 * h)):
            raise PreconditionError("Free-space domains are not nested")
        self._d0_in_d1 = self._offset(self.d1)
        self._d0_in_d2 = self._offset(self.d2)

    def _offset(self, dom: DirichletDomain) -> Tuple[slice, slice]:
        start = np.rint((np.array(self.origin0) - np.array(dom.origin)) / np.array(self.spacing)).astype(int)
        return tuple(slice(s, s + n) for s, n in zip(start, self.n0))

    def charge_grid(self) -> FieldGrid2D:
        """Empty D0 grid on which particles deposit"""
        return FieldGrid2D.zeros(self.n0, self.spacing, self.origin0, DIRICHLET)

    def solve(self, rho: np.ndarray) -> FieldGrid2D:
        """
        Free-space potential of a charge density given on D0 nodes

        Returns:
            phi on every node of D2
        """
        rho = np.asarray(rho, dtype=float)
        if rho.shape != self.n0:
            raise ShapeError(f"Charge of shape {rho.shape} does not match the free-space grid {self.n0}")

        rhs1 = np.zeros(self.d1.shape)
        rhs1[self._d0_in_d1] = rho
        phi1 = solve_dirichlet(self.d1, rhs1)

        layer = surface_charge(self.d1, phi1)
        ring = self.d2.ring_mask()
        mesh_x, mesh_y = self.d2.mesh()
        boundary = np.zeros(self.d2.shape)
        targets = np.column_stack([mesh_x[ring], mesh_y[ring]])
        boundary[ring] = boundary_convolution(layer, targets, self.workers, self.spacing)

        rhs2 = np.zeros(self.d2.shape)
        rhs2[self._d0_in_d2] = rho
        phi2 = solve_dirichlet(self.d2, rhs2, boundary)
        logger.debug(f"Free-space solve: surface charge {layer.total:.6g}, D2 {self.d2.shape}")
        return self.d2.as_grid(phi2)

    def field(self, rho: FieldGrid2D) -> FieldGrid2D:
        """Electric field on the D0 nodes"""
        E = compute_E(self.solve(rho.values))
        return FieldGrid2D(self.n0, self.spacing, self.origin0, E.values[self._d0_in_d2], DIRICHLET)


def solve_freespace(rho: FieldGrid2D, inner_pad: int = 2, outer_pad: Optional[Tuple[int, int]] = None) -> FieldGrid2D:
    """Free-space potential on D2 for a density given on a node grid"""
    solver = FreeSpacePoissonSolver(rho.n, rho.spacing, rho.origin, inner_pad, outer_pad)
    return solver.solve(rho.values)
