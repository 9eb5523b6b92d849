"""
Phase-Space Composite Grid

A hierarchy of cell-centered 4D grids over (x, y, vx, vy). Level 0 covers the
whole domain; each finer level is a union of boxes nested in its parent. A
cell is valid when no finer box lies over it, and the valid cells of all
levels tile phase space exactly once.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import DomainError, GridAlignmentError, NestingError, OutOfLevelError, PreconditionError

logger = logging.getLogger(__name__)

DIM = 4
AXES = ('x', 'y', 'vx', 'vy')
# Relative tolerance for deciding that a physical coordinate sits on a cell face
FACE_TOL = 1e-9


@dataclass(frozen=True)
class LevelBox:
    """Inclusive range of cell indices in one level's global index space"""
    lo: Tuple[int, ...]
    hi: Tuple[int, ...]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != DIM or len(hi) != DIM:
            raise PreconditionError(f"LevelBox needs {DIM}-vectors, got lo={lo} hi={hi}")
        if any(l > h for l, h in zip(lo, hi)):
            raise PreconditionError(f"LevelBox has lo > hi: lo={lo} hi={hi}")
        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def contains(self, idx: np.ndarray) -> np.ndarray:
        """Mask of index rows (..., 4) that fall inside the box"""
        idx = np.asarray(idx)
        return np.all((idx >= np.array(self.lo)) & (idx <= np.array(self.hi)), axis=-1)

    def contains_box(self, other: 'LevelBox') -> bool:
        return all(sl <= ol and oh <= sh for sl, sh, ol, oh in zip(self.lo, self.hi, other.lo, other.hi))

    def intersection(self, other: 'LevelBox') -> Optional['LevelBox']:
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(l > h for l, h in zip(lo, hi)):
            return None
        return LevelBox(lo, hi)

    def coarsen(self, ratio) -> 'LevelBox':
        ratio = np.asarray(ratio, dtype=int)
        return LevelBox(tuple(np.array(self.lo) // ratio), tuple(np.array(self.hi) // ratio))

    def refine(self, ratio) -> 'LevelBox':
        ratio = np.asarray(ratio, dtype=int)
        return LevelBox(tuple(np.array(self.lo) * ratio), tuple((np.array(self.hi) + 1) * ratio - 1))

    def local(self, idx: np.ndarray) -> Tuple[np.ndarray, ...]:
        """Convert global index rows into a tuple usable for box-array indexing"""
        idx = np.asarray(idx) - np.array(self.lo)
        return tuple(idx[..., d] for d in range(DIM))

    def indices(self) -> np.ndarray:
        """All global indices of the box, shape (n_cells, 4), C order"""
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True, eq=False)
class Level:
    """One refinement level: boxes, spacing, and ratio to the next finer level"""
    index: int
    boxes: Tuple[LevelBox, ...]
    spacing: np.ndarray
    refine_ratio: np.ndarray
    n_cells: np.ndarray
    covered: Tuple[np.ndarray, ...] = field(default=(), repr=False)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def find_box(self, idx: np.ndarray) -> np.ndarray:
        """Box number holding each index row, -1 when none does"""
        idx = np.atleast_2d(idx)
        owner = np.full(idx.shape[0], -1, dtype=int)
        for number, box in enumerate(self.boxes):
            inside = box.contains(idx) & (owner < 0)
            owner[inside] = number
        return owner


@dataclass(frozen=True)
class CellId:
    """A cell of the composite grid: level number and global 4D index"""
    level: int
    idx: Tuple[int, ...]


class CompositeGrid:
    """Immutable hierarchy of phase-space levels"""

    def __init__(self, domain_lo, domain_hi, levels: Sequence[Level]):
        self.domain_lo = np.asarray(domain_lo, dtype=float)
        self.domain_hi = np.asarray(domain_hi, dtype=float)
        self.levels: Tuple[Level, ...] = tuple(levels)
        # Ratio from each level to the finest level
        cumulative = [np.ones(DIM, dtype=int)]
        for level in reversed(self.levels[:-1]):
            cumulative.append(cumulative[-1] * level.refine_ratio)
        self._to_finest = tuple(reversed(cumulative))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> Level:
        return self.levels[-1]

    @property
    def volume(self) -> float:
        return float(np.prod(self.domain_hi - self.domain_lo))

    def valid_volume(self) -> float:
        """Sum of the volumes of all valid cells"""
        total = 0.0
        for level in self.levels:
            n_valid = sum(int(np.count_nonzero(~mask)) for mask in level.covered)
            total += n_valid * level.cell_volume
        return total

    def is_valid(self, cell: CellId) -> bool:
        level = self.levels[cell.level]
        idx = np.asarray(cell.idx, dtype=int)
        owner = level.find_box(idx)[0]
        if owner < 0:
            raise OutOfLevelError(f"Cell {tuple(idx)} lies outside every box of level {cell.level}")
        box = level.boxes[owner]
        return not bool(level.covered[owner][box.local(idx)])

    def cell_center(self, cell: CellId) -> np.ndarray:
        level = self.levels[cell.level]
        return self.domain_lo + (np.asarray(cell.idx, dtype=float) + 0.5) * level.spacing

    def locate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Find the valid cell of every point

        Args:
            points: Array (N, 4) of phase-space points inside the domain

        Returns:
            (level, idx): level number per point and global index (N, 4)
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        outside = np.any((points < self.domain_lo) | (points > self.domain_hi), axis=1)
        if np.any(outside):
            first = points[np.argmax(outside)]
            raise DomainError(f"{int(outside.sum())} point(s) outside the phase-space domain, e.g. {tuple(first)}")

        finest = self.finest
        scaled = (points - self.domain_lo) / finest.spacing
        # Points on a face belong to the cell with the lower index
        idx_finest = np.ceil(scaled).astype(np.int64) - 1
        idx_finest = np.clip(idx_finest, 0, finest.n_cells - 1)

        level_of = np.zeros(points.shape[0], dtype=int)
        idx = idx_finest // self._to_finest[0]
        assigned = np.zeros(points.shape[0], dtype=bool)
        for number in range(self.n_levels - 1, 0, -1):
            candidate = idx_finest // self._to_finest[number]
            inside = (self.levels[number].find_box(candidate) >= 0) & ~assigned
            level_of[inside] = number
            idx[inside] = candidate[inside]
            assigned |= inside
        return level_of, idx

    def locate_valid_cell(self, point) -> CellId:
        level, idx = self.locate(np.asarray(point, dtype=float).reshape(1, DIM))
        return CellId(int(level[0]), tuple(int(v) for v in idx[0]))

    def valid_cells(self, level_number: int) -> np.ndarray:
        """Global indices (M, 4) of the valid cells of one level"""
        level = self.levels[level_number]
        chunks = [box.indices()[~mask.ravel()] for box, mask in zip(level.boxes, level.covered)]
        if not chunks:
            return np.zeros((0, DIM), dtype=np.int64)
        return np.concatenate(chunks)

    def centers(self, level_number: int, idx: np.ndarray) -> np.ndarray:
        return self.domain_lo + (np.asarray(idx, dtype=float) + 0.5) * self.levels[level_number].spacing

    def describe(self) -> str:
        lines = [f"Composite grid: {self.n_levels} level(s), domain {tuple(self.domain_lo)} .. {tuple(self.domain_hi)}"]
        for level in self.levels:
            n_valid = sum(int(np.count_nonzero(~m)) for m in level.covered)
            lines.append(f"  level {level.index}: spacing {tuple(np.round(level.spacing, 6))}, "
                         f"{len(level.boxes)} box(es), {n_valid} valid cells")
        return "\n".join(lines)


@dataclass(frozen=True)
class Refinement:
    """Physical region (lo, hi) of phase space refined by `ratio` relative to its parent"""
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    ratio: Tuple[int, ...]


def _region_to_cells(lo, hi, domain_lo, spacing, snap: bool) -> Tuple[np.ndarray, np.ndarray]:
    s_lo = (np.asarray(lo, dtype=float) - domain_lo) / spacing
    s_hi = (np.asarray(hi, dtype=float) - domain_lo) / spacing
    tol = FACE_TOL * np.maximum(1.0, np.abs(np.concatenate([s_lo, s_hi])).max())
    aligned = (np.all(np.abs(s_lo - np.round(s_lo)) <= tol)
               and np.all(np.abs(s_hi - np.round(s_hi)) <= tol))
    if not aligned and not snap:
        raise GridAlignmentError(f"Refinement region {tuple(lo)}..{tuple(hi)} is not on parent cell faces")
    cell_lo = np.floor(s_lo + tol).astype(int)
    cell_hi = np.ceil(s_hi - tol).astype(int) - 1
    if not aligned:
        logger.info(f"Refinement region {tuple(lo)}..{tuple(hi)} snapped outward to parent cell faces")
    return cell_lo, cell_hi


def _covered_masks(level_boxes, finer_boxes, ratio) -> Tuple[np.ndarray, ...]:
    masks = []
    for box in level_boxes:
        mask = np.zeros(box.shape, dtype=bool)
        for fine in finer_boxes:
            overlap = box.intersection(fine.coarsen(ratio))
            if overlap is None:
                continue
            region = tuple(slice(l - b, h - b + 1) for l, h, b in zip(overlap.lo, overlap.hi, box.lo))
            mask[region] = True
        masks.append(mask)
    return tuple(masks)


def _check_nesting(region: LevelBox, parent_boxes) -> None:
    hit = np.zeros(region.shape, dtype=bool)
    for parent in parent_boxes:
        overlap = region.intersection(parent)
        if overlap is None:
            continue
        hit[tuple(slice(l - r, h - r + 1) for l, h, r in zip(overlap.lo, overlap.hi, region.lo))] = True
    if not np.all(hit):
        raise NestingError(f"Refinement box {region} is not nested inside its parent level")


def build_hierarchy(domain_lo, domain_hi, base_cells, refinements=(), snap: bool = True) -> CompositeGrid:
    """
    Build a composite grid from physical refinement regions

    Args:
        domain_lo, domain_hi: Physical bounds of phase space (4-vectors)
        base_cells: Level-0 cell counts per dimension
        refinements: Sequence of Refinement (or (region, ratio) pairs with region=(lo, hi));
                     entry k defines level k+1 inside level k
        snap: Snap misaligned regions outward to parent faces instead of raising

    Returns:
        CompositeGrid
    """
    domain_lo = np.asarray(domain_lo, dtype=float)
    domain_hi = np.asarray(domain_hi, dtype=float)
    base_cells = np.asarray(base_cells, dtype=int)
    if domain_lo.shape != (DIM,) or domain_hi.shape != (DIM,) or base_cells.shape != (DIM,):
        raise PreconditionError("Domain bounds and base cells must be 4-vectors")
    if np.any(base_cells < 1):
        raise PreconditionError(f"Base cells must be >= 1 in every dimension, got {tuple(base_cells)}")
    if np.any(domain_hi <= domain_lo):
        raise PreconditionError("Domain upper bounds must exceed lower bounds")

    specs = []
    for item in refinements:
        if isinstance(item, Refinement):
            specs.append(item)
        else:
            (lo, hi), ratio = item
            specs.append(Refinement(tuple(lo), tuple(hi), tuple(ratio)))

    spacing = (domain_hi - domain_lo) / base_cells
    n_cells = base_cells.copy()
    boxes_per_level: List[Tuple[LevelBox, ...]] = [(LevelBox(tuple(np.zeros(DIM, int)), tuple(base_cells - 1)),)]
    spacings = [spacing]
    extents = [n_cells]
    ratios = []

    for spec in specs:
        ratio = np.asarray(spec.ratio, dtype=int)
        if ratio.shape != (DIM,) or np.any(ratio < 1):
            raise PreconditionError(f"Refinement ratio must be a 4-vector of integers >= 1, got {spec.ratio}")
        cell_lo, cell_hi = _region_to_cells(spec.lo, spec.hi, domain_lo, spacings[-1], snap)
        if np.any(cell_hi < cell_lo):
            raise PreconditionError(f"Refinement region {spec.lo}..{spec.hi} is empty")
        if np.any(cell_lo < 0) or np.any(cell_hi >= extents[-1]):
            raise NestingError(f"Refinement region {spec.lo}..{spec.hi} extends outside the domain")
        coarse_box = LevelBox(tuple(cell_lo), tuple(cell_hi))
        _check_nesting(coarse_box, boxes_per_level[-1])

        ratios.append(ratio)
        boxes_per_level.append((coarse_box.refine(ratio),))
        spacings.append(spacings[-1] / ratio)
        extents.append(extents[-1] * ratio)
    ratios.append(np.ones(DIM, dtype=int))

    levels = []
    for number, boxes in enumerate(boxes_per_level):
        finer = boxes_per_level[number + 1] if number + 1 < len(boxes_per_level) else ()
        covered = _covered_masks(boxes, finer, ratios[number])
        levels.append(Level(number, boxes, spacings[number], ratios[number], extents[number], covered))

    grid = CompositeGrid(domain_lo, domain_hi, levels)
    logger.debug(grid.describe())
    return grid


def is_valid(grid: CompositeGrid, cell: CellId) -> bool:
    """True iff no finer box lies over the cell"""
    return grid.is_valid(cell)


def locate_valid_cell(grid: CompositeGrid, point) -> CellId:
    """Unique valid cell containing the point; faces go to the lower index"""
    return grid.locate_valid_cell(point)


def cell_center(grid: CompositeGrid, cell: CellId) -> np.ndarray:
    """Physical center domain_lo + (idx + 0.5) * h of a cell"""
    return grid.cell_center(cell)
