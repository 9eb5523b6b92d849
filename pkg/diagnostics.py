"""
Diagnostics

Per-step time series, field amplitudes, damping and growth rate fits,
Richardson error estimates and the (x, vx) projection of the particles.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.signal import find_peaks

from errors import AlignmentError, FitError, OrderUndefinedError, PreconditionError
from particles import PERIODIC, FieldGrid2D, ParticleSet
from problems import rms

logger = logging.getLogger(__name__)

COLUMNS = ['t', 'ex_l2', 'ex_linf', 'ey_l2', 'total_q', 'rms_x', 'rms_vx', 'minf']
PEAK_DISTANCE = 3


class TimeSeries:
    """Diagnostics records, one per step, with strictly increasing time"""

    def __init__(self, records: Optional[Iterable[dict]] = None):
        self.records = []
        for record in records or ():
            self.append(**record)

    def __len__(self):
        return len(self.records)

    def append(self, t: float, **values) -> None:
        if self.records and not t > self.records[-1]['t']:
            raise PreconditionError(f"Time series needs increasing times: {t} after {self.records[-1]['t']}")
        record = {name: float('nan') for name in COLUMNS}
        record.update(values)
        record['t'] = float(t)
        self.records.append(record)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'TimeSeries':
        return cls(frame.to_dict('records'))

    def column(self, name: str) -> np.ndarray:
        return np.array([record[name] for record in self.records], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column('t')


def field_amplitude(E: FieldGrid2D) -> Tuple[float, float]:
    """Per-component L2 norm sqrt(sum E^2 * cell area)"""
    if not E.is_vector:
        raise PreconditionError("Field amplitude needs a vector field")
    squares = np.sum(E.values**2, axis=(0, 1)) * E.cell_area
    return float(np.sqrt(squares[0])), float(np.sqrt(squares[1]))


def field_amplitude_linf(E: FieldGrid2D) -> Tuple[float, float]:
    peaks = np.max(np.abs(E.values), axis=(0, 1))
    return float(peaks[0]), float(peaks[1])


def _window(t: np.ndarray, amplitude: np.ndarray, window: Optional[Tuple[float, float]]):
    t = np.asarray(t, dtype=float)
    amplitude = np.asarray(amplitude, dtype=float)
    if window is not None:
        inside = (t >= window[0]) & (t <= window[1])
        t, amplitude = t[inside], amplitude[inside]
    positive = amplitude > 0
    return t[positive], np.log(amplitude[positive])


def fit_damping_rate(series, window: Optional[Tuple[float, float]] = None, column: str = 'ex_l2') -> float:
    """
    Exponential rate through the peaks of an oscillating amplitude

    Args:
        series: TimeSeries, or a (t, amplitude) pair of arrays
        window: (t_start, t_end) to fit over, None for everything
        column: TimeSeries column holding the amplitude

    Returns:
        Least-squares slope of ln(peak amplitude) against peak time
    """
    if isinstance(series, TimeSeries):
        t, amplitude = series.times, series.column(column)
    else:
        t, amplitude = series
    t, log_amp = _window(t, amplitude, window)
    if log_amp.size and np.ptp(log_amp) <= 1e-12 * max(1.0, np.max(np.abs(log_amp))):
        return 0.0

    peaks, _ = find_peaks(log_amp, distance=PEAK_DISTANCE)
    if peaks.size < 3:
        raise FitError(f"Damping fit needs at least 3 amplitude peaks, found {peaks.size}")
    slope, _ = np.polyfit(t[peaks], log_amp[peaks], 1)
    logger.debug(f"Damping fit over {peaks.size} peaks: rate {slope:.6g}")
    return float(slope)


def fit_growth_rate(t, amplitude, window: Optional[Tuple[float, float]] = None) -> float:
    """Least-squares slope of ln(amplitude) over a time window"""
    t, log_amp = _window(t, amplitude, window)
    if t.size < 2:
        raise FitError(f"Growth fit needs at least 2 samples, got {t.size}")
    slope, _ = np.polyfit(t, log_amp, 1)
    return float(slope)


def sliding_growth_rates(t, amplitude, width: float) -> pd.DataFrame:
    """Growth rate fitted over a window of `width` centered on every sample"""
    t = np.asarray(t, dtype=float)
    rows = []
    for center in t:
        lo, hi = center - width / 2.0, center + width / 2.0
        if lo < t[0] or hi > t[-1]:
            continue
        rows.append({'t': center, 'rate': fit_growth_rate(t, amplitude, (lo, hi))})
    return pd.DataFrame(rows, columns=['t', 'rate'])


def _coincident(fine: FieldGrid2D, coarse: FieldGrid2D) -> np.ndarray:
    expected = tuple(2 * n if fine.bc_kind == PERIODIC else 2 * n - 1 for n in coarse.n)
    if fine.bc_kind != coarse.bc_kind or fine.n != expected:
        raise AlignmentError(f"Fine grid {fine.n} is not a 2x refinement of coarse grid {coarse.n}")
    if not (np.allclose(2.0 * fine.spacing, coarse.spacing, rtol=1e-12, atol=0)
            and np.allclose(fine.origin, coarse.origin, rtol=0, atol=1e-12 * np.max(coarse.spacing))):
        raise AlignmentError("Fine and coarse grids do not share their coarse nodes")
    return fine.values[::2, ::2]


def richardson_error(fine: FieldGrid2D, coarse: FieldGrid2D) -> np.ndarray:
    """
    L-infinity difference at coincident nodes, one value per component

    Returns:
        Array (2,) for vector fields, (1,) for scalar fields
    """
    difference = np.abs(_coincident(fine, coarse) - coarse.values)
    if difference.ndim == 2:
        return np.array([difference.max()])
    return difference.max(axis=(0, 1))


def convergence_order(e_2h, e_h) -> float:
    """Smallest log2 error ratio over directions"""
    e_2h = np.atleast_1d(np.asarray(e_2h, dtype=float))
    e_h = np.atleast_1d(np.asarray(e_h, dtype=float))
    if np.any(e_2h <= 0) or np.any(e_h <= 0):
        raise OrderUndefinedError(f"Convergence order is undefined for zero errors: e_2h={e_2h}, e_h={e_h}")
    return float(np.min(np.log2(e_2h / e_h)))


@dataclass(frozen=True)
class ProjectionGrid:
    """Node grid in (x, vx); x nodes wrap when periodic, vx has nv + 1 nodes"""
    x_lo: float
    x_hi: float
    nx: int
    vx_lo: float
    vx_hi: float
    nv: int
    periodic_x: bool = True

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.nx

    @property
    def dv(self) -> float:
        return (self.vx_hi - self.vx_lo) / self.nv

    @property
    def x_nodes(self) -> np.ndarray:
        count = self.nx if self.periodic_x else self.nx + 1
        return self.x_lo + np.arange(count) * self.dx

    @property
    def vx_nodes(self) -> np.ndarray:
        return self.vx_lo + np.arange(self.nv + 1) * self.dv


@dataclass
class Projection:
    grid: ProjectionGrid
    values: np.ndarray
    clamped: int
    clamped_charge: float

    def total(self) -> float:
        return float(np.sum(self.values) * self.grid.dx * self.grid.dv)

    def to_frame(self) -> pd.DataFrame:
        xs, vs = np.meshgrid(self.grid.x_nodes, self.grid.vx_nodes, indexing='ij')
        return pd.DataFrame({'x': xs.ravel(), 'vx': vs.ravel(), 'F': self.values.ravel()})


def _linear_axis(values, lo, spacing, count, periodic):
    s = (values - lo) / spacing
    if periodic:
        left = np.floor(s)
        weight = s - left
        left = left.astype(np.int64) % count
        return left, (left + 1) % count, weight, np.zeros(values.size, dtype=bool)
    outside = (s < 0) | (s > count - 1)
    s = np.clip(s, 0, count - 1)
    left = np.minimum(np.floor(s), count - 2).astype(np.int64)
    return left, left + 1, s - left, outside


def project_xvx(particles: ParticleSet, grid: ProjectionGrid) -> Projection:
    """
    F(x, vx): particle weights deposited on the (x, vx) plane with linear weights

    Points beyond the grid are clamped to the nearest edge node and counted.
    """
    nx = grid.x_nodes.size
    nv = grid.vx_nodes.size
    ix0, ix1, wx, x_out = _linear_axis(particles.x, grid.x_lo, grid.dx, nx, grid.periodic_x)
    iv0, iv1, wv, v_out = _linear_axis(particles.vx, grid.vx_lo, grid.dv, nv, False)
    clamped = x_out | v_out

    values = np.zeros(nx * nv)
    for ix, iv, w in ((ix0, iv0, (1 - wx) * (1 - wv)), (ix1, iv0, wx * (1 - wv)),
                      (ix0, iv1, (1 - wx) * wv), (ix1, iv1, wx * wv)):
        values += np.bincount(ix * nv + iv, weights=particles.q * w, minlength=nx * nv)
    values = values.reshape(nx, nv) / (grid.dx * grid.dv)

    clamped_charge = float(np.sum(particles.q[clamped]))
    if np.any(clamped):
        logger.info(f"Projection: {int(clamped.sum())} particle(s) clamped to the grid edge, charge {clamped_charge:.3e}")
    return Projection(grid, values, int(clamped.sum()), clamped_charge)


def rms_summary(particles: ParticleSet, selectors: Sequence[str] = ('x', 'y', 'vx', 'vy')) -> dict:
    """RMS of several coordinates, NaN when undefined"""
    summary = {}
    for name in selectors:
        try:
            summary[name] = rms(particles, name)
        except ValueError:
            summary[name] = float('nan')
    return summary
