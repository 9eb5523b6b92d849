"""
PIC Simulation Engine

Time loop of the remapped particle-in-cell method: quiet start, field solve,
midpoint push, periodic remap and per-step diagnostics. Also runs the
three-resolution convergence study and the classical-versus-remapped
comparison.
"""

import logging
import os
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from config import SINGLE, RunConfig
from diagnostics import (ProjectionGrid, Projection, TimeSeries, convergence_order, field_amplitude,
                         field_amplitude_linf, project_xvx, richardson_error, rms_summary)
from errors import BeamEscapeError, ConfigError, DepositionError, PICError, SimulationError
from particles import FieldGrid2D, ParticleSet, deposit_charge, quiet_start_init, rk2_step
from phase_grid import CompositeGrid, build_hierarchy
from poisson_freespace import FreeSpacePoissonSolver
from poisson_periodic import PeriodicPoissonOp, solve_field
from problems import SEMI_GAUSSIAN, normalized_kv_targets
from remap import RemapReport, remap_with_report

logger = logging.getLogger(__name__)

CELL_TOL = 1e-9
TIME_DIGITS = 9


@dataclass
class SimulationResult:
    """Everything a finished run hands to the output writers"""
    config: RunConfig
    series: TimeSeries
    snapshots: Dict[float, Projection]
    remap_reports: List[Tuple[int, RemapReport]]
    particles: ParticleSet
    final_field: FieldGrid2D
    grid: CompositeGrid
    fields: Dict[float, FieldGrid2D] = field(default_factory=dict)
    wall_time: float = 0.0
    # rows (t, px, py) of the total momentum sum(q v), one per record
    momentum: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def final_time(self) -> float:
        return float(self.series.times[-1])

    @property
    def momentum_drift(self) -> float:
        """Largest |P(t) - P(0)| over the run"""
        if len(self.momentum) == 0:
            return 0.0
        change = self.momentum[:, 1:] - self.momentum[0, 1:]
        return float(np.max(np.hypot(change[:, 0], change[:, 1])))


def _whole_cells(length: np.ndarray, spacing: np.ndarray, what: str) -> Tuple[int, int]:
    counts = length / spacing
    rounded = np.rint(counts)
    if np.any(np.abs(counts - rounded) > CELL_TOL * np.maximum(rounded, 1.0)) or np.any(rounded < 1):
        raise ConfigError(f"{what}: domain length {tuple(length)} is not a whole number of field cells "
                          f"of size {tuple(spacing)}")
    return int(rounded[0]), int(rounded[1])


class PICSimulation:
    """
    One run of the remapped PIC method

    The field grid spacing is field_ratio times the finest spatial spacing of
    the phase-space grid. Periodic problems use the spectral solver with a
    neutralizing background; the beam uses the free-space solver on a node
    grid covering the spatial domain.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.problem = config.problem
        lo, hi = np.array(self.problem.domain_lo), np.array(self.problem.domain_hi)
        self.grid = build_hierarchy(lo, hi, config.base_cells, config.refinements)
        self.spatial_lo = lo[:2]
        self.spatial_length = (hi - lo)[:2]

        spacing = config.field_ratio * self.grid.finest.spacing[:2]
        cells = _whole_cells(self.spatial_length, spacing, "Field grid")
        if self.problem.periodic:
            if any(n < 4 or n % 2 for n in cells):
                raise ConfigError(f"Periodic field grid needs an even node count >= 4 per dimension, got {cells}")
            self.operator = PeriodicPoissonOp(cells, spacing, neutralize=True)
            self.solver = None
            self.periodic_box = (self.spatial_lo, self.spatial_length)
        else:
            nodes = (cells[0] + 1, cells[1] + 1)
            outer = (config.outer_pad, config.outer_pad) if config.outer_pad else None
            self.operator = None
            self.solver = FreeSpacePoissonSolver(nodes, spacing, self.spatial_lo, config.inner_pad, outer,
                                                 config.workers)
            self.periodic_box = None
        self.e_ext = self.problem.external_field()
        self.projection_grid = ProjectionGrid(
            lo[0], hi[0], config.projection_cells[0], lo[2], hi[2], config.projection_cells[1],
            periodic_x=self.problem.periodic)
        self.last_min_f = float('nan')
        self.momentum_rows: List[Tuple[float, float, float]] = []
        logger.info(f"PIC setup: {self.problem.kind}, {self.grid.n_levels} level(s), field grid {cells}, "
                    f"dt {config.dt:g}, {config.n_steps} steps")

    def solve_fields(self, particles: ParticleSet) -> FieldGrid2D:
        """Deposit charge and return E on the field grid"""
        workers = self.config.workers
        if self.solver is None:
            rho = deposit_charge(particles, self.operator.empty_grid(self.spatial_lo), workers)
            return solve_field(self.operator, rho, particles.species_sign)
        try:
            rho = deposit_charge(particles, self.solver.charge_grid(), workers)
        except DepositionError as exc:
            raise BeamEscapeError(f"Beam left the field grid: {exc}") from exc
        if particles.species_sign:
            rho = rho.with_values(-rho.values)
        return self.solver.field(rho)

    def record(self, series: TimeSeries, t: float, particles: ParticleSet, E: FieldGrid2D) -> None:
        ex_l2, ey_l2 = field_amplitude(E)
        ex_linf, _ = field_amplitude_linf(E)
        spread = rms_summary(particles, ('x', 'vx'))
        series.append(t, ex_l2=ex_l2, ex_linf=ex_linf, ey_l2=ey_l2, total_q=particles.total_charge,
                      rms_x=spread['x'], rms_vx=spread['vx'], minf=self.last_min_f)
        px, py = particles.momentum()
        self.momentum_rows.append((t, float(px), float(py)))
        logger.debug(f"t={t:g}: |Ex|_2 {ex_l2:.6e}, Q {particles.total_charge:.15g}, P ({px:.6e}, {py:.6e})")

    def dump_state(self, particles: ParticleSet, step: int) -> Optional[str]:
        path = os.path.join(self.config.output_dir, f"state_step{step}.npz")
        try:
            os.makedirs(self.config.output_dir, exist_ok=True)
            np.savez(path, x=particles.x, y=particles.y, vx=particles.vx, vy=particles.vy, q=particles.q,
                     species_sign=particles.species_sign, step=step)
        except OSError as exc:
            logger.error(f"Could not dump state to {path}: {exc}")
            return None
        return path

    def run(self, progress: bool = True) -> SimulationResult:
        """
        Run the time loop to t_end

        Args:
            progress: Show a tqdm progress bar

        Returns:
            SimulationResult
        """
        config = self.config
        remap_config = config.remap
        started = time.perf_counter()
        self.last_min_f = float('nan')
        self.momentum_rows = []
        particles = quiet_start_init(self.grid, self.problem.f0(), config.threshold, self.problem.species_sign)
        series = TimeSeries()
        snapshots: Dict[float, Projection] = {}
        fields: Dict[float, FieldGrid2D] = {}
        reports: List[Tuple[int, RemapReport]] = []
        pending = sorted(config.snapshot_times)

        E = self.solve_fields(particles)
        self.record(series, 0.0, particles, E)
        pending = self._snapshot(0.0, particles, E, pending, snapshots, fields)

        steps = range(1, config.n_steps + 1)
        for step in tqdm(steps, desc=self.problem.kind, disable=not progress, leave=False):
            t = (step - 1) * config.dt
            try:
                particles = rk2_step(particles, self.solve_fields, self.e_ext, config.dt, t,
                                     self.periodic_box, field0=E, workers=config.workers)
                if not np.all(np.isfinite(particles.phase_points())):
                    raise SimulationError("Particle state became non-finite", step, self.dump_state(particles, step))
                if remap_config is not None and step % remap_config.interval == 0:
                    particles, report, _ = remap_with_report(particles, self.grid, remap_config)
                    reports.append((step, report))
                    self.last_min_f = report.min_f
                E = self.solve_fields(particles)
            except (SimulationError, BeamEscapeError):
                raise
            except PICError as exc:
                raise SimulationError(f"{type(exc).__name__}: {exc}", step, self.dump_state(particles, step)) from exc

            t = step * config.dt
            self.record(series, t, particles, E)
            pending = self._snapshot(t, particles, E, pending, snapshots, fields)

        wall = time.perf_counter() - started
        result = SimulationResult(config, series, snapshots, reports, particles, E, self.grid, fields, wall,
                                  np.array(self.momentum_rows).reshape(-1, 3))
        logger.info(f"Run finished at t={series.times[-1]:g}: {len(particles)} particles, "
                    f"total charge {particles.total_charge:.12g}, {len(reports)} remap(s), {wall:.1f} s, "
                    f"momentum drift {result.momentum_drift:.3e}")
        kv = kv_rms_check(result)
        if kv is not None:
            target, final, worst = kv
            logger.info(f"K-V target rms_x {target:.6g}: final deviation {final:.2%}, largest {worst:.2%}")
        return result

    def _snapshot(self, t: float, particles: ParticleSet, E: FieldGrid2D, pending: List[float],
                  snapshots: Dict[float, Projection], fields: Dict[float, FieldGrid2D]) -> List[float]:
        """Project the particles and keep E for every requested time within half a step of t"""
        half = 0.5 * self.config.dt
        while pending and pending[0] <= t + half:
            wanted = pending.pop(0)
            if wanted >= t - half:
                snapshots[t] = project_xvx(particles, self.projection_grid)
                fields[wanted] = E
        return pending


def run_simulation(config: RunConfig, progress: bool = True) -> SimulationResult:
    return PICSimulation(config).run(progress)


def run_comparison(config: RunConfig, progress: bool = True) -> Tuple[SimulationResult, SimulationResult]:
    """Same problem with and without remapping: (classical, remapped)"""
    if config.remap_interval == 0:
        raise ConfigError("Comparison needs remap_interval >= 1 for the remapped run")
    classical = run_simulation(replace(config, remap_interval=0), progress)
    remapped = run_simulation(config, progress)
    return classical, remapped


@dataclass
class StudyPoint:
    """Richardson errors between successive resolutions at one time, and the orders between them"""
    t: float
    errors: List[np.ndarray]
    orders: List[float]


@dataclass
class ConvergenceStudy:
    factors: List[int]
    points: List[StudyPoint] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for point in self.points:
            for i, error in enumerate(point.errors):
                rows.append({
                    't': point.t,
                    'pair': f"{self.factors[i]}x/{self.factors[i + 1]}x",
                    'error_x': float(error[0]),
                    'error_y': float(error[-1]),
                    'order': point.orders[i - 1] if i > 0 else float('nan'),
                })
        return pd.DataFrame(rows, columns=['t', 'pair', 'error_x', 'error_y', 'order'])


def study_from_fields(fields: Sequence[FieldGrid2D], t: float = float('nan')) -> StudyPoint:
    """
    Errors and orders from fields at one time, ordered coarsest first

    Args:
        fields: Fields at successive 2x refinements, at least three
        t: Time the fields belong to

    Returns:
        StudyPoint; raises OrderUndefinedError when an error is zero
    """
    if len(fields) < 3:
        raise ConfigError(f"A convergence study needs at least three resolutions, got {len(fields)}")
    errors = [richardson_error(fine, coarse) for coarse, fine in zip(fields[:-1], fields[1:])]
    orders = [convergence_order(e_2h, e_h) for e_2h, e_h in zip(errors[:-1], errors[1:])]
    return StudyPoint(t, errors, orders)


def _fields_of_run(config: RunConfig) -> Dict[float, FieldGrid2D]:
    result = run_simulation(config, progress=False)
    return {**result.fields, result.final_time: result.final_field}


def run_convergence_study(config: RunConfig) -> ConvergenceStudy:
    """
    Run `config.levels` resolutions, each doubling cells and halving dt

    Errors are taken at every snapshot time and at t_end. Runs execute in
    separate processes; each one is deterministic so the study does not
    depend on the worker count.
    """
    factors = [2**i for i in range(config.levels)]
    configs = [replace(config.refined(f), mode=SINGLE, workers=1) for f in factors]
    n_jobs = min(len(configs), config.workers)
    logger.info(f"Convergence study: factors {factors} on {n_jobs} process(es)")
    runs = Parallel(n_jobs=n_jobs, backend='loky')(delayed(_fields_of_run)(c) for c in configs)

    keyed = [{round(t, TIME_DIGITS): E for t, E in run.items()} for run in runs]
    times = sorted(set.intersection(*(set(run) for run in keyed)))
    study = ConvergenceStudy(factors)
    for t in times:
        point = study_from_fields([run[t] for run in keyed], t)
        logger.info(f"Convergence at t={t:g}: orders {[round(q, 3) for q in point.orders]}")
        study.points.append(point)
    return study


def kv_rms_check(result: SimulationResult) -> Optional[Tuple[float, float, float]]:
    """
    Compare a beam run with its equivalent K-V beam

    Returns:
        (K-V rms_x target, final relative deviation, largest relative deviation),
        or None for problems other than the beam
    """
    problem = result.config.problem
    if problem.kind != SEMI_GAUSSIAN:
        return None
    target = normalized_kv_targets(problem.eta)['rms_x']
    deviation = np.abs(result.series.column('rms_x') - target) / target
    return target, float(deviation[-1]), float(np.max(deviation))


def print_report(result: SimulationResult) -> None:
    """Print a run summary with its conservation ledger"""
    frame = result.series.to_frame()
    initial_q, final_q = frame['total_q'].iloc[0], frame['total_q'].iloc[-1]
    reports = [report for _, report in result.remap_reports]
    print("\n" + "=" * 50)
    print("SIMULATION RESULTS")
    print("=" * 50)
    print(f"Problem:            {result.config.problem.kind}")
    print(f"Levels:             {result.grid.n_levels}")
    print(f"Steps:              {len(frame) - 1}")
    print(f"Final time:         {result.final_time:g}")
    print(f"Particles:          {len(result.particles)}")
    print(f"Wall time:          {result.wall_time:.1f} s")
    print(f"\nTotal charge:       {initial_q:.12g} -> {final_q:.12g}")
    print(f"Remaps:             {len(reports)}")
    if reports:
        print(f"Dropped charge:     {sum(r.dropped for r in reports):.3e}")
        print(f"Lost charge:        {sum(r.lost for r in reports):.3e}")
        print(f"Worst remap drift:  {max(r.conservation_error for r in reports):.3e}")
        print(f"Lowest min f:       {min(r.min_f for r in reports):.3e}")
    print(f"Momentum drift:     {result.momentum_drift:.3e}")
    print(f"\nFinal |Ex|_2:       {frame['ex_l2'].iloc[-1]:.6e}")
    kv = kv_rms_check(result)
    if kv is not None:
        target, final, worst = kv
        print(f"K-V rms_x target:   {target:.6g}")
        print(f"Final rms_x:        {frame['rms_x'].iloc[-1]:.6g} ({final:.2%} off)")
        print(f"Largest deviation:  {worst:.2%}")
    print("=" * 50 + "\n")


def print_study(study: ConvergenceStudy) -> None:
    print("\n" + "=" * 50)
    print("CONVERGENCE STUDY")
    print("=" * 50)
    print(f"{'t':<8} {'Pair':<10} {'Error Ex':<13} {'Error Ey':<13} {'Order'}")
    print("-" * 50)
    for row in study.to_frame().itertuples(index=False):
        order = '' if np.isnan(row.order) else f"{row.order:.3f}"
        print(f"{row.t:<8g} {row.pair:<10} {row.error_x:<13.5e} {row.error_y:<13.5e} {order}")
    print("=" * 50 + "\n")
