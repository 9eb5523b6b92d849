"""
Phase-Space Remapping

Re-deposits particle charge onto the composite grid with the W4 kernel,
moves charge that landed in halos or covered cells into valid cells,
repairs negative cells by local redistribution, and creates a fresh
quiet-start particle set from the gridded distribution.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

import parallel
from errors import PreconditionError, RemapDomainError
from particles import ParticleSet, particles_from_cells, wrap_positions
from phase_grid import DIM, CompositeGrid

logger = logging.getLogger(__name__)

GHOST = 2
REMAP_CHUNK = 1 << 14
PLASMA_PERIODIC = (True, True, False, False)


def w4_eval(x, h: float = 1.0):
    """
    Third-order W4 interpolation kernel

    Piecewise cubic in s = |x|/h: 1 - 5s^2/2 + 3s^3/2 on [0, 1),
    (2 - s)^2 (1 - s)/2 on [1, 2), zero beyond.
    """
    if h <= 0:
        raise PreconditionError(f"Kernel spacing must be positive, got {h}")
    s = np.abs(np.asarray(x, dtype=float)) / h
    inner = 1.0 - 2.5 * s**2 + 1.5 * s**3
    outer = 0.5 * (2.0 - s) ** 2 * (1.0 - s)
    return np.where(s < 1.0, inner, np.where(s < 2.0, outer, 0.0))


@dataclass(frozen=True)
class RemapConfig:
    """Remap cadence and the knobs of each remap"""
    interval: int = 5
    threshold: float = 1e-9
    iterations: int = 3
    radius: int = 1
    periodic: Tuple[bool, ...] = PLASMA_PERIODIC
    workers: int = 1
    chunk_size: int = REMAP_CHUNK

    def __post_init__(self):
        if self.interval < 1:
            raise PreconditionError(f"Remap interval must be >= 1, got {self.interval}")
        if self.iterations < 0:
            raise PreconditionError(f"Positivity iterations must be >= 0, got {self.iterations}")
        if self.radius < 1:
            raise PreconditionError(f"Redistribution radius must be >= 1, got {self.radius}")
        if self.threshold < 0:
            raise PreconditionError(f"Drop threshold must be >= 0, got {self.threshold}")
        if len(self.periodic) != DIM:
            raise PreconditionError(f"Periodicity flags must have {DIM} entries")


class CompositeField:
    """
    Cell values f on every box of a composite grid

    Each box array carries GHOST halo cells per side so that W4 stencils of
    particles near a box edge can be deposited before transfer. `lost` is the
    ledger of charge that left the phase-space domain.
    """

    def __init__(self, grid: CompositeGrid, data: Optional[List[List[np.ndarray]]] = None, lost: float = 0.0):
        self.grid = grid
        if data is None:
            data = [[np.zeros(tuple(s + 2 * GHOST for s in box.shape)) for box in level.boxes]
                    for level in grid.levels]
        self.data = data
        self.lost = lost

    def copy(self) -> 'CompositeField':
        return CompositeField(self.grid, [[a.copy() for a in boxes] for boxes in self.data], self.lost)

    def interior(self, level: int, box: int) -> np.ndarray:
        """Writable view of a box without its halo"""
        return self.data[level][box][(slice(GHOST, -GHOST),) * DIM]

    def valid_values(self, level: int) -> np.ndarray:
        """Values of the valid cells of a level, ordered like CompositeGrid.valid_cells"""
        masks = self.grid.levels[level].covered
        chunks = [self.interior(level, b).ravel()[~mask.ravel()] for b, mask in enumerate(masks)]
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def total_charge(self) -> float:
        """Integral of f over the valid cells"""
        return float(sum(level.cell_volume * np.sum(self.valid_values(level.index)) for level in self.grid.levels))

    def stray_charge(self) -> float:
        """Charge held in halos or covered cells"""
        total = 0.0
        for level in self.grid.levels:
            for b, mask in enumerate(level.covered):
                everything = np.sum(self.data[level.index][b])
                valid = np.sum(self.interior(level.index, b)[~mask])
                total += (everything - valid) * level.cell_volume
        return float(total)

    def min_valid(self) -> float:
        values = [self.valid_values(level.index) for level in self.grid.levels]
        values = [v for v in values if v.size]
        return float(min(v.min() for v in values)) if values else 0.0

    def max_valid(self) -> float:
        values = [self.valid_values(level.index) for level in self.grid.levels]
        values = [v for v in values if v.size]
        return float(max(v.max() for v in values)) if values else 0.0

    def l1_distance(self, other: 'CompositeField') -> float:
        """Integral of |f - g| over the valid cells of a field on the same grid"""
        if other.grid is not self.grid:
            raise PreconditionError("Fields live on different grids")
        return float(sum(level.cell_volume * np.sum(np.abs(self.valid_values(level.index) - other.valid_values(level.index)))
                         for level in self.grid.levels))


@dataclass
class RedistributionReport:
    negative_before: int = 0
    negative_after: int = 0
    flagged: int = 0
    iterations_used: int = 0

    def merge(self, other: 'RedistributionReport') -> 'RedistributionReport':
        return RedistributionReport(self.negative_before + other.negative_before,
                                    self.negative_after + other.negative_after,
                                    self.flagged + other.flagged,
                                    max(self.iterations_used, other.iterations_used))


@dataclass
class RemapReport:
    """Conservation ledger and positivity statistics of one remap"""
    charge_before: float
    charge_after: float
    dropped: float
    lost: float
    n_particles: int
    min_f: float
    max_f: float
    redistribution: RedistributionReport = field(default_factory=RedistributionReport)
    # L1 norm of the change made by positivity repair
    repair_l1: float = 0.0

    @property
    def conservation_error(self) -> float:
        scale = abs(self.charge_before) if self.charge_before else 1.0
        return abs(self.charge_after - self.charge_before + self.dropped + self.lost) / scale

    def summary(self) -> str:
        r = self.redistribution
        return (f"Remap: {self.n_particles} particles, Q {self.charge_after:.12g}, dropped {self.dropped:.3e}, "
                f"lost {self.lost:.3e}, negative cells {r.negative_before} -> {r.negative_after}, "
                f"flagged {r.flagged}, sweeps {r.iterations_used}, repair L1 {self.repair_l1:.3e}, "
                f"min f {self.min_f:.3e}, conservation error {self.conservation_error:.2e}")


def _wrap_periodic(points: np.ndarray, grid: CompositeGrid, periodic: Sequence[bool]) -> np.ndarray:
    points = points.copy()
    for d in range(DIM):
        if periodic[d]:
            points[:, d] = wrap_positions(points[:, d], grid.domain_lo[d], grid.domain_hi[d] - grid.domain_lo[d])
    return points


def deposit_w4_composite(particles: ParticleSet, grid: CompositeGrid, periodic: Sequence[bool] = PLASMA_PERIODIC,
                         workers: int = 1, chunk_size: int = REMAP_CHUNK) -> CompositeField:
    """
    Deposit particles with the tensor-product W4 kernel

    Every particle deposits onto the 4^4 stencil of its valid cell's level,
    halos included; values are in units of f. Particles outside the domain
    are booked in the field's lost ledger.

    Args:
        particles: Particle set
        grid: Target composite grid
        periodic: Per-dimension periodicity
        workers: Threads for chunked accumulation
        chunk_size: Particles per chunk

    Returns:
        CompositeField with raw deposits
    """
    result = CompositeField(grid)
    if len(particles) == 0:
        return result

    points = particles.phase_points()
    if not np.all(np.isfinite(points)):
        raise RemapDomainError(f"{int(np.sum(~np.all(np.isfinite(points), axis=1)))} particle(s) have non-finite coordinates")
    points = _wrap_periodic(points, grid, periodic)
    inside = np.all((points >= grid.domain_lo) & (points <= grid.domain_hi), axis=1)
    if not np.all(inside):
        result.lost += float(np.sum(particles.q[~inside]))
        logger.info(f"Remap: {int(np.sum(~inside))} particle(s) outside the phase-space domain, "
                    f"charge {result.lost:.3e} booked as lost")
    points, q = points[inside], particles.q[inside]

    levels, cells = grid.locate(points)
    offsets = np.arange(4)
    for level in grid.levels:
        on_level = levels == level.index
        if not np.any(on_level):
            continue
        owners = level.find_box(cells[on_level])
        level_points, level_q = points[on_level], q[on_level]
        for number, box in enumerate(level.boxes):
            mine = owners == number
            if not np.any(mine):
                continue
            box_points, box_q = level_points[mine], level_q[mine]
            shape = result.data[level.index][number].shape
            strides = np.array([int(np.prod(shape[d + 1:])) for d in range(DIM)])
            size = int(np.prod(shape))
            scale = 1.0 / level.cell_volume

            def partial(piece: slice, box_points=box_points, box_q=box_q, box=box, strides=strides,
                        size=size, scale=scale, spacing=level.spacing) -> np.ndarray:
                s = (box_points[piece] - grid.domain_lo) / spacing - 0.5
                first = np.floor(s).astype(np.int64) - 1
                weights = w4_eval(s[:, :, None] - (first[:, :, None] + offsets))
                local = (first - np.array(box.lo) + GHOST)[:, :, None] + offsets
                flat = np.zeros((s.shape[0],) + (4,) * DIM, dtype=np.int64)
                total = np.ones((s.shape[0],) + (4,) * DIM)
                for d in range(DIM):
                    expand = [slice(None)] + [None] * DIM
                    expand[d + 1] = slice(None)
                    flat = flat + local[:, d, :][tuple(expand)] * strides[d]
                    total = total * weights[:, d, :][tuple(expand)]
                total *= (box_q[piece] * scale)[(slice(None),) + (None,) * DIM]
                return np.bincount(flat.ravel(), weights=total.ravel(), minlength=size)

            flat_sum = parallel.accumulate(partial, box_q.size, size, workers, chunk_size)
            result.data[level.index][number] += flat_sum.reshape(shape)
    return result


def _add_at_level(field: CompositeField, number: int, cells: np.ndarray, values: np.ndarray,
                  allow_halo: bool = True) -> None:
    """
    Add f-valued deposits at global cells of one level

    Cells inside a box go to its interior, cells within a box halo go to the
    halo when `allow_halo` is set, and anything else is coarsened to the
    parent level with volume weighting. Charge with no home at level 0 is lost.
    """
    if values.size == 0:
        return
    grid = field.grid
    level = grid.levels[number]
    pending = np.ones(values.size, dtype=bool)
    for b, box in enumerate(level.boxes):
        hit = pending & box.contains(cells)
        if np.any(hit):
            np.add.at(field.data[number][b], tuple((cells[hit] - np.array(box.lo) + GHOST).T), values[hit])
            pending &= ~hit
    for b, box in enumerate(level.boxes if allow_halo else ()):
        lo = np.array(box.lo) - GHOST
        hi = np.array(box.hi) + GHOST
        hit = pending & np.all((cells >= lo) & (cells <= hi), axis=1)
        if np.any(hit):
            np.add.at(field.data[number][b], tuple((cells[hit] - lo).T), values[hit])
            pending &= ~hit
    if not np.any(pending):
        return
    if number == 0:
        field.lost += float(np.sum(values[pending])) * level.cell_volume
        return
    parent = grid.levels[number - 1]
    _add_at_level(field, number - 1, cells[pending] // parent.refine_ratio,
                  values[pending] * level.cell_volume / parent.cell_volume)


def _collect_halos(field: CompositeField, number: int, periodic: Sequence[bool]) -> None:
    grid = field.grid
    level = grid.levels[number]
    for b, box in enumerate(level.boxes):
        array = field.data[number][b]
        halo = np.ones(array.shape, dtype=bool)
        halo[(slice(GHOST, -GHOST),) * DIM] = False
        spots = np.argwhere(halo & (array != 0.0))
        if spots.size == 0:
            continue
        values = array[tuple(spots.T)]
        array[halo] = 0.0
        cells = spots - GHOST + np.array(box.lo)
        for d in range(DIM):
            if periodic[d]:
                cells[:, d] %= level.n_cells[d]
        inside = np.all((cells >= 0) & (cells < level.n_cells), axis=1)
        if not np.all(inside):
            field.lost += float(np.sum(values[~inside])) * level.cell_volume
        _add_at_level(field, number, cells[inside], values[inside], allow_halo=False)


def _covered_slopes(values: np.ndarray, covered: np.ndarray, axis: int) -> np.ndarray:
    """
    Linear slopes from covered neighbors only

    Central difference where both neighbors along `axis` are covered,
    one-sided where one is, zero for a cell with no covered neighbor.
    Valid neighbors are ignored.
    """
    widths = [(1, 1) if d == axis else (0, 0) for d in range(values.ndim)]
    padded = np.pad(np.where(covered, values, 0.0), widths)
    mask = np.pad(covered, widths)
    n = values.shape[axis]
    ahead, behind = np.take(padded, np.arange(2, n + 2), axis=axis), np.take(padded, np.arange(n), axis=axis)
    has_ahead, has_behind = np.take(mask, np.arange(2, n + 2), axis=axis), np.take(mask, np.arange(n), axis=axis)
    slopes = np.zeros(values.shape)
    both = has_ahead & has_behind
    slopes[both] = 0.5 * (ahead[both] - behind[both])
    only_ahead = has_ahead & ~has_behind
    slopes[only_ahead] = ahead[only_ahead] - values[only_ahead]
    only_behind = has_behind & ~has_ahead
    slopes[only_behind] = values[only_behind] - behind[only_behind]
    return slopes


def _split_covered(field: CompositeField, number: int) -> None:
    """
    Move covered-cell charge of one level to its children by linear splitting

    Children take the parent value plus a linear slope times their offset, so
    every parent's children sum to its charge exactly. Slopes are shrunk where
    they would make a child of a non-negative parent negative.
    """
    grid = field.grid
    level = grid.levels[number]
    ratio = level.refine_ratio
    reach = (ratio - 1) / (2.0 * ratio)
    for b, (box, covered) in enumerate(zip(level.boxes, level.covered)):
        if not np.any(covered):
            continue
        interior = field.interior(number, b)
        cells = np.argwhere(covered)
        values = interior[covered]
        slopes = np.zeros((values.size, DIM))
        for d in range(DIM):
            if ratio[d] > 1:
                slopes[:, d] = _covered_slopes(interior, covered, d)[covered]
        spread = np.abs(slopes) @ reach
        scale = np.where(values > 0, 1.0, 0.0)
        shrink = (spread > values) & (values > 0)
        scale[shrink] = values[shrink] / spread[shrink]
        slopes *= scale[:, None]

        base = (cells + np.array(box.lo)) * ratio
        for child in np.ndindex(*ratio):
            offset = (np.array(child) + 0.5) / ratio - 0.5
            _add_at_level(field, number + 1, base + np.array(child), values + slopes @ offset, allow_halo=False)
        interior[covered] = 0.0


def transfer_interface_charge(field: CompositeField, grid: CompositeGrid,
                              periodic: Sequence[bool] = PLASMA_PERIODIC) -> CompositeField:
    """
    Move every deposit into a valid cell

    Halo deposits are wrapped in periodic dimensions, added to the box that
    owns them or projected onto the parent level, finest level first. Charge
    in covered coarse cells is then split onto the finer level, coarsest
    first. Charge outside the domain is added to the lost ledger.
    """
    if field.grid is not grid:
        raise PreconditionError("Field does not belong to this grid")
    result = field.copy()
    for number in range(grid.n_levels - 1, -1, -1):
        _collect_halos(result, number, periodic)
    for number in range(grid.n_levels - 1):
        _split_covered(result, number)
    return result


def neighborhood_sum(values: np.ndarray, radius: int, periodic_axes: Sequence[bool]) -> np.ndarray:
    """Sum over the hypercube of the given radius around every cell, center included"""
    total = values
    for axis in range(values.ndim):
        n = total.shape[axis]
        widths = [(radius, radius) if d == axis else (0, 0) for d in range(values.ndim)]
        if periodic_axes[axis]:
            padded = np.pad(total, widths, mode='wrap')
        else:
            padded = np.pad(total, widths, mode='constant')
        summed = np.zeros_like(total)
        for shift in range(2 * radius + 1):
            summed += np.take(padded, np.arange(shift, shift + n), axis=axis)
        total = summed
    return total


def redistribute_array(values: np.ndarray, mask: Optional[np.ndarray] = None, radius: int = 1,
                       iterations: int = 3, periodic_axes: Optional[Sequence[bool]] = None
                       ) -> Tuple[np.ndarray, RedistributionReport]:
    """
    Conservative positivity repair of one array

    Each sweep zeroes every negative cell and charges its deficit to its
    neighbors in proportion to their non-negative values, all cells reading
    the same frozen iterate. Cells whose neighbors hold nothing are left
    negative and flagged.

    Args:
        values: Cell values (any dimension)
        mask: Cells taking part; others are neither donors nor receivers
        radius: Neighborhood radius in cells
        iterations: Maximum number of sweeps
        periodic_axes: Axes that wrap around

    Returns:
        (new values, RedistributionReport)
    """
    f = np.array(values, dtype=float)
    mask = np.ones(f.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    periodic_axes = (False,) * f.ndim if periodic_axes is None else tuple(periodic_axes)
    report = RedistributionReport(negative_before=int(np.count_nonzero((f < 0) & mask)))

    flagged = np.zeros(f.shape, dtype=bool)
    for sweep in range(iterations):
        deficit = np.where(mask, np.minimum(f, 0.0), 0.0)
        if not np.any(deficit < 0):
            break
        capacity = np.where(mask, np.maximum(f, 0.0), 0.0)
        around = neighborhood_sum(capacity, radius, periodic_axes) - capacity
        active = (deficit < 0) & (around > 0)
        flagged = (deficit < 0) & ~active
        if not np.any(active):
            break
        share = np.zeros_like(f)
        share[active] = deficit[active] / around[active]
        incoming = capacity * (neighborhood_sum(share, radius, periodic_axes) - share)
        f = f - np.where(active, deficit, 0.0) + incoming
        report.iterations_used = sweep + 1

    residual = (f < 0) & mask
    report.negative_after = int(np.count_nonzero(residual))
    report.flagged = int(np.count_nonzero(flagged & residual))
    return f, report


def redistribute_positivity(field: CompositeField, radius: int = 1, iterations: int = 3,
                            periodic: Sequence[bool] = PLASMA_PERIODIC
                            ) -> Tuple[CompositeField, RedistributionReport]:
    """
    Positivity repair on the valid cells of every level

    Neighborhoods stay within one box of one level; a box wraps in a periodic
    dimension only when it spans the whole domain there.
    """
    result = field.copy()
    report = RedistributionReport()
    for level in field.grid.levels:
        for b, (box, covered) in enumerate(zip(level.boxes, level.covered)):
            spans = [periodic[d] and box.lo[d] == 0 and box.hi[d] == level.n_cells[d] - 1 for d in range(DIM)]
            interior = result.interior(level.index, b)
            repaired, box_report = redistribute_array(interior, ~covered, radius, iterations, spans)
            interior[...] = repaired
            report = report.merge(box_report)
    if report.flagged:
        logger.warning(f"Positivity: {report.flagged} negative cell(s) without capacity left unchanged")
    return result, report


def _regenerate(field: CompositeField, grid: CompositeGrid, threshold: float,
                species_sign: int) -> Tuple[ParticleSet, float]:
    points, weights = [], []
    for level in grid.levels:
        points.append(grid.centers(level.index, grid.valid_cells(level.index)))
        weights.append(field.valid_values(level.index) * level.cell_volume)
    return particles_from_cells(np.concatenate(points), np.concatenate(weights), threshold, species_sign)


def regenerate_particles(field: CompositeField, grid: CompositeGrid, threshold: float,
                         species_sign: int = 0) -> ParticleSet:
    """One particle per valid cell with q = f * cell volume, dropping |q| < threshold"""
    particles, dropped = _regenerate(field, grid, threshold, species_sign)
    if dropped:
        logger.info(f"Regenerate: dropped charge {dropped:.3e} below threshold {threshold:g}")
    return particles


def remap_with_report(particles: ParticleSet, grid: CompositeGrid,
                      config: RemapConfig) -> Tuple[ParticleSet, RemapReport, CompositeField]:
    """
    Full remap pipeline

    Returns:
        (new particles, RemapReport, repaired CompositeField)
    """
    before = particles.total_charge
    raw = deposit_w4_composite(particles, grid, config.periodic, config.workers, config.chunk_size)
    moved = transfer_interface_charge(raw, grid, config.periodic)
    repaired, sweep_report = redistribute_positivity(moved, config.radius, config.iterations, config.periodic)
    fresh, dropped = _regenerate(repaired, grid, config.threshold, particles.species_sign)
    report = RemapReport(
        charge_before=before,
        charge_after=fresh.total_charge,
        dropped=dropped,
        lost=repaired.lost,
        n_particles=len(fresh),
        min_f=repaired.min_valid(),
        max_f=repaired.max_valid(),
        redistribution=sweep_report,
        repair_l1=repaired.l1_distance(moved),
    )
    logger.info(report.summary())
    return fresh, report, repaired


def remap(particles: ParticleSet, grid: CompositeGrid, config: RemapConfig) -> ParticleSet:
    """Deposit, transfer, repair and regenerate"""
    return remap_with_report(particles, grid, config)[0]
