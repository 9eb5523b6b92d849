"""
Run Outputs

Writes the time series, (x, vx) projections, manifest and plot script of a
run into its output directory, plus PNG plots of the field amplitude and the
RMS sizes.
"""

import logging
import os
from typing import List, Optional

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from config import render_config
from pic_engine import ConvergenceStudy, SimulationResult

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'

GNUPLOT_SCRIPT = """\
set datafile separator ','
set key autotitle columnhead
set logscale y
set xlabel 't'
set ylabel '|E_x|_2'
set terminal pngcairo size 900,500
set output 'amplitude_gp.png'
plot '{series}' using 1:2 with lines title '|E_x|_2'

unset logscale y
set ylabel 'RMS'
set output 'rms_gp.png'
plot '{series}' using 1:6 with lines title 'x_rms', \\
     '{series}' using 1:7 with lines dashtype 2 title 'vx_rms'
"""


def attach_run_log(output_dir: str, level: int = logging.INFO) -> logging.Handler:
    """Copy every log record of the run into output_dir/run.log"""
    os.makedirs(output_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(output_dir, 'run.log'), mode='w')
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


def projection_name(t: float) -> str:
    return f"proj_xvx_{t:.4f}.csv"


def write_outputs(result: SimulationResult, output_dir: Optional[str] = None, suffix: str = '') -> List[str]:
    """
    Write the files of one run

    Args:
        result: Finished simulation
        output_dir: Target directory, the config's output_dir by default
        suffix: Appended to the file stems, used for comparison runs

    Returns:
        Paths written
    """
    output_dir = output_dir or result.config.output_dir
    os.makedirs(output_dir, exist_ok=True)
    written = []

    series_name = f"timeseries{suffix}.csv"
    path = os.path.join(output_dir, series_name)
    result.series.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
    written.append(path)

    for t, projection in sorted(result.snapshots.items()):
        stem, ext = os.path.splitext(projection_name(t))
        path = os.path.join(output_dir, f"{stem}{suffix}{ext}")
        projection.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)

    path = os.path.join(output_dir, f"manifest{suffix}.txt")
    with open(path, 'w') as handle:
        handle.write(render_config(result.config))
    written.append(path)

    path = os.path.join(output_dir, f"plot{suffix}.gp")
    with open(path, 'w') as handle:
        handle.write(GNUPLOT_SCRIPT.format(series=series_name))
    written.append(path)

    logger.info(f"Wrote {len(written)} file(s) to {output_dir}")
    return written


def write_study(study: ConvergenceStudy, output_dir: str) -> str:
    os.makedirs(output_dir, exist_ok=True)
    path = os.path.join(output_dir, 'convergence.csv')
    study.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def plot_results(results: List[SimulationResult], labels: Optional[List[str]] = None,
                 output_dir: Optional[str] = None, show: bool = False) -> List[str]:
    """
    Plot |Ex|_2 on a log scale and the RMS sizes of one or more runs

    Returns:
        Paths of amplitude.png and rms.png
    """
    labels = labels or [r.config.problem.kind for r in results]
    output_dir = output_dir or results[0].config.output_dir
    os.makedirs(output_dir, exist_ok=True)

    plt.figure(figsize=(12, 6))
    for result, label in zip(results, labels):
        frame = result.series.to_frame()
        plt.semilogy(frame['t'], np.maximum(frame['ex_l2'], 1e-300), label=label, linewidth=2)
    plt.xlabel('t')
    plt.ylabel('|E_x|_2')
    plt.title('Field amplitude')
    plt.legend()
    plt.grid(True, alpha=0.3)
    plt.tight_layout()
    amplitude = os.path.join(output_dir, 'amplitude.png')
    plt.savefig(amplitude)
    if show:
        plt.show()
    plt.close()

    plt.figure(figsize=(12, 6))
    for result, label in zip(results, labels):
        frame = result.series.to_frame()
        plt.plot(frame['t'], frame['rms_x'], label=f"{label} x_rms", linewidth=2)
        plt.plot(frame['t'], frame['rms_vx'], label=f"{label} vx_rms", linestyle='--')
    plt.xlabel('t')
    plt.ylabel('RMS')
    plt.title('RMS sizes')
    plt.legend()
    plt.grid(True, alpha=0.3)
    plt.tight_layout()
    spread = os.path.join(output_dir, 'rms.png')
    plt.savefig(spread)
    if show:
        plt.show()
    plt.close()
    return [amplitude, spread]
