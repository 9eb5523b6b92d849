"""
Particles and the Particle-Mesh Coupling

Structure-of-arrays particle storage, quiet-start initialization on the
phase-space composite grid, first-order (cloud-in-cell) deposition and field
gather on 2D node grids, and the midpoint RK2 push.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

import parallel
from errors import DepositionError, InitializationError, PreconditionError, ShapeError
from phase_grid import CompositeGrid

logger = logging.getLogger(__name__)

PERIODIC = 'periodic'
DIRICHLET = 'dirichlet'


@dataclass
class ParticleSet:
    """
    Particle positions, velocities and weights stored as flat arrays

    species_sign is 0 for positive charges and 1 for negative charges; the
    acceleration carries the factor (-1)**species_sign.
    """
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    q: np.ndarray
    species_sign: int = 0

    def __post_init__(self):
        arrays = [np.ascontiguousarray(a, dtype=float).ravel() for a in (self.x, self.y, self.vx, self.vy, self.q)]
        lengths = {a.size for a in arrays}
        if len(lengths) > 1:
            raise ShapeError(f"Particle arrays differ in length: {sorted(lengths)}")
        self.x, self.y, self.vx, self.vy, self.q = arrays
        if self.species_sign not in (0, 1):
            raise PreconditionError(f"species_sign must be 0 or 1, got {self.species_sign}")
        if not np.all(np.isfinite(self.q)):
            raise InitializationError("Particle weights must be finite")

    def __len__(self):
        return self.q.size

    @classmethod
    def empty(cls, species_sign: int = 0) -> 'ParticleSet':
        zeros = np.zeros(0)
        return cls(zeros, zeros, zeros, zeros, zeros, species_sign)

    @classmethod
    def from_phase_points(cls, points: np.ndarray, q: np.ndarray, species_sign: int = 0) -> 'ParticleSet':
        points = np.asarray(points, dtype=float).reshape(-1, 4)
        return cls(points[:, 0], points[:, 1], points[:, 2], points[:, 3], q, species_sign)

    @property
    def total_charge(self) -> float:
        return float(np.sum(self.q))

    @property
    def sign(self) -> float:
        return -1.0 if self.species_sign == 1 else 1.0

    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def velocities(self) -> np.ndarray:
        return np.column_stack([self.vx, self.vy])

    def phase_points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y, self.vx, self.vy])

    def with_state(self, x, y, vx, vy) -> 'ParticleSet':
        return replace(self, x=x, y=y, vx=vx, vy=vy, q=self.q.copy())

    def momentum(self) -> np.ndarray:
        """Total momentum sum(q v) as (px, py)"""
        return self.q @ self.velocities()


@dataclass
class FieldGrid2D:
    """
    Node-centered 2D field

    Node (i, j) sits at origin + (i * spacing[0], j * spacing[1]). Periodic
    grids have period n * spacing. `values` has shape n (scalar) or n + (2,)
    (vector).
    """
    n: Tuple[int, int]
    spacing: np.ndarray
    origin: np.ndarray
    values: np.ndarray
    bc_kind: str = PERIODIC

    def __post_init__(self):
        self.n = tuple(int(v) for v in self.n)
        self.spacing = np.asarray(self.spacing, dtype=float).reshape(2)
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.spacing <= 0):
            raise PreconditionError(f"Field grid spacing must be positive, got {tuple(self.spacing)}")
        if self.bc_kind not in (PERIODIC, DIRICHLET):
            raise PreconditionError(f"Unknown boundary kind '{self.bc_kind}'")
        if self.values.shape not in (self.n, self.n + (2,)):
            raise ShapeError(f"Field values of shape {self.values.shape} do not match grid {self.n}")

    @classmethod
    def zeros(cls, n, spacing, origin=(0.0, 0.0), bc_kind: str = PERIODIC, vector: bool = False) -> 'FieldGrid2D':
        shape = tuple(int(v) for v in n) + ((2,) if vector else ())
        return cls(tuple(n), spacing, origin, np.zeros(shape), bc_kind)

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 3

    @property
    def cell_area(self) -> float:
        return float(self.spacing[0] * self.spacing[1])

    @property
    def period(self) -> np.ndarray:
        return np.array(self.n) * self.spacing

    def with_values(self, values: np.ndarray) -> 'FieldGrid2D':
        return FieldGrid2D(self.n, self.spacing.copy(), self.origin.copy(), values, self.bc_kind)

    def node_coords(self) -> Tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + np.arange(self.n[0]) * self.spacing[0]
        ys = self.origin[1] + np.arange(self.n[1]) * self.spacing[1]
        return xs, ys

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        xs, ys = self.node_coords()
        return np.meshgrid(xs, ys, indexing='ij')


def u1_eval(z):
    """First-order interpolation function 1 - |z| on [-1, 1], zero outside"""
    return np.maximum(0.0, 1.0 - np.abs(z))


def _cic_axis(coord: np.ndarray, origin: float, spacing: float, n: int, periodic: bool):
    """Left node, right node and right weight of the linear stencil along one axis"""
    s = (coord - origin) / spacing
    if periodic:
        left = np.floor(s)
        w_right = s - left
        left = left.astype(np.int64) % n
        right = (left + 1) % n
        return left, right, w_right
    outside = (s < 0) | (s > n - 1)
    if np.any(outside):
        bad = coord[np.argmax(outside)]
        raise DepositionError(f"{int(outside.sum())} particle(s) outside the field grid support, e.g. at {bad:.6g}")
    left = np.minimum(np.floor(s), n - 2).astype(np.int64)
    return left, left + 1, s - left


def _stencil(grid: FieldGrid2D, px: np.ndarray, py: np.ndarray):
    periodic = grid.bc_kind == PERIODIC
    ix0, ix1, wx = _cic_axis(px, grid.origin[0], grid.spacing[0], grid.n[0], periodic)
    iy0, iy1, wy = _cic_axis(py, grid.origin[1], grid.spacing[1], grid.n[1], periodic)
    return ((ix0, iy0, (1 - wx) * (1 - wy)), (ix1, iy0, wx * (1 - wy)),
            (ix0, iy1, (1 - wx) * wy), (ix1, iy1, wx * wy))


def deposit_charge(particles: ParticleSet, grid: FieldGrid2D, workers: int = 1,
                   chunk_size: int = parallel.DEFAULT_CHUNK) -> FieldGrid2D:
    """
    Deposit particle charge onto the nodes of a field grid

    Args:
        particles: Particle set
        grid: Target grid; its spacing is the smoothing length
        workers: Threads used for chunked accumulation

    Returns:
        Scalar FieldGrid2D of charge density
    """
    nx, ny = grid.n

    def partial(piece: slice) -> np.ndarray:
        rho = np.zeros(nx * ny)
        for ix, iy, w in _stencil(grid, particles.x[piece], particles.y[piece]):
            rho += np.bincount(ix * ny + iy, weights=particles.q[piece] * w, minlength=nx * ny)
        return rho

    rho = parallel.accumulate(partial, len(particles), nx * ny, workers, chunk_size)
    return FieldGrid2D(grid.n, grid.spacing, grid.origin, rho.reshape(nx, ny) / grid.cell_area, grid.bc_kind)


def gather_field(grid: FieldGrid2D, positions, workers: int = 1,
                 chunk_size: int = parallel.DEFAULT_CHUNK) -> np.ndarray:
    """Interpolate nodal values to positions with the deposition kernel"""
    positions = np.asarray(positions, dtype=float)
    single = positions.ndim == 1
    positions = positions.reshape(-1, 2)

    def interpolate(piece: slice) -> np.ndarray:
        px, py = positions[piece, 0], positions[piece, 1]
        out = np.zeros((px.size,) + grid.values.shape[2:])
        for ix, iy, w in _stencil(grid, px, py):
            sample = grid.values[ix, iy]
            out += sample * (w[:, None] if grid.is_vector else w)
        return out

    result = parallel.map_chunks(interpolate, positions.shape[0], workers, chunk_size)
    return result[0] if single else result


def particles_from_cells(points: np.ndarray, q: np.ndarray, threshold: float,
                         species_sign: int = 0) -> Tuple[ParticleSet, float]:
    """
    Build one particle per cell, dropping weights below the threshold

    Returns:
        (ParticleSet, dropped charge)
    """
    if threshold < 0:
        raise PreconditionError(f"Drop threshold must be >= 0, got {threshold}")
    keep = np.abs(q) >= threshold
    dropped = float(np.sum(q[~keep]))
    return ParticleSet.from_phase_points(points[keep], q[keep], species_sign), dropped


def quiet_start_init(grid: CompositeGrid, f0: Callable, threshold: float,
                     species_sign: int = 0) -> ParticleSet:
    """
    Place one particle at the center of every valid cell

    Args:
        grid: Phase-space composite grid
        f0: Vectorized distribution f0(x, y, vx, vy)
        threshold: Particles with |q| below this are not created
        species_sign: 0 for positive, 1 for negative charges

    Returns:
        ParticleSet with q = f0(center) * cell volume
    """
    points, weights = [], []
    for level in grid.levels:
        centers = grid.centers(level.index, grid.valid_cells(level.index))
        values = np.asarray(f0(centers[:, 0], centers[:, 1], centers[:, 2], centers[:, 3]), dtype=float)
        values = np.broadcast_to(values, (centers.shape[0],))
        if not np.all(np.isfinite(values)):
            bad = centers[np.argmax(~np.isfinite(values))]
            raise InitializationError(f"Initial distribution is not finite at {tuple(np.round(bad, 6))}")
        points.append(centers)
        weights.append(values * level.cell_volume)

    particles, dropped = particles_from_cells(np.concatenate(points), np.concatenate(weights), threshold, species_sign)
    logger.info(f"Quiet start: {len(particles)} particles, total charge {particles.total_charge:.12g}, "
                f"dropped {dropped:.3e}")
    return particles


def wrap_positions(values: np.ndarray, lo: float, length: float) -> np.ndarray:
    """Map coordinates into [lo, lo + length)"""
    wrapped = lo + np.mod(values - lo, length)
    # np.mod can round up to exactly `length` for tiny negative offsets
    return np.where(wrapped >= lo + length, lo, wrapped)


def rk2_step(particles: ParticleSet, field_solve: Callable[[ParticleSet], FieldGrid2D],
             e_ext: Optional[Callable], dt: float, t: float,
             periodic_box: Optional[Tuple[np.ndarray, np.ndarray]] = None,
             field0: Optional[FieldGrid2D] = None, workers: int = 1) -> ParticleSet:
    """
    Advance particles one step with the midpoint rule

    Args:
        particles: Current particles
        field_solve: Deposits the particles and returns the vector E grid
        e_ext: External field e_ext(x, y, t) -> (Ex, Ey), or None
        dt: Time step
        t: Current time
        periodic_box: (lo, length) of the periodic spatial box, or None
        field0: E grid already solved at (particles, t)
        workers: Threads for gather

    Returns:
        ParticleSet at t + dt with unchanged weights
    """
    if dt <= 0:
        raise PreconditionError(f"Time step must be positive, got {dt}")

    def acceleration(state: ParticleSet, time: float, grid: Optional[FieldGrid2D]) -> np.ndarray:
        if grid is None:
            grid = field_solve(state)
        accel = gather_field(grid, state.positions(), workers).reshape(-1, 2)
        if e_ext is not None:
            ex, ey = e_ext(state.x, state.y, time)
            accel = accel + np.column_stack([np.broadcast_to(ex, state.x.shape), np.broadcast_to(ey, state.y.shape)])
        return state.sign * accel

    def wrapped(px, py):
        if periodic_box is None:
            return px, py
        lo, length = periodic_box
        return wrap_positions(px, lo[0], length[0]), wrap_positions(py, lo[1], length[1])

    a0 = acceleration(particles, t, field0)
    half = 0.5 * dt
    xh, yh = wrapped(particles.x + half * particles.vx, particles.y + half * particles.vy)
    vxh = particles.vx + half * a0[:, 0]
    vyh = particles.vy + half * a0[:, 1]
    midpoint = particles.with_state(xh, yh, vxh, vyh)

    ah = acceleration(midpoint, t + half, None)
    x1, y1 = wrapped(particles.x + dt * vxh, particles.y + dt * vyh)
    return particles.with_state(x1, y1, particles.vx + dt * ah[:, 0], particles.vy + dt * ah[:, 1])
