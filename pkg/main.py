"""
Command-line driver for the remapped PIC simulator

    python main.py simulate run.cfg --dt=0.0625
    python main.py preset landau --compare
    python main.py converge study.cfg
    python main.py normalize
"""

import argparse
import logging
import sys

from config import CONVERGENCE, PRESETS, RunConfig, parse_config, preset_config
from errors import ConfigError, GridAlignmentError, NestingError, PICError
from outputs import LOG_FORMAT, attach_run_log, plot_results, write_outputs, write_study
from pic_engine import print_report, print_study, run_comparison, run_convergence_study, run_simulation
from problems import BeamParameters, normalize_beam, normalized_kv_targets

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Vlasov-Poisson PIC with phase-space remapping")
    parser.add_argument('-v', '--verbose', action='store_true', help="Debug logging")
    parser.add_argument('--no-progress', action='store_true', help="Hide the progress bar")
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help="Run a config file; --key=value flags override it")
    simulate.add_argument('config')
    simulate.add_argument('--compare', action='store_true', help="Also run classical PIC for comparison")
    simulate.add_argument('--plot', action='store_true', help="Write amplitude.png and rms.png")

    preset = commands.add_parser('preset', help="Run a benchmark preset")
    preset.add_argument('name', choices=PRESETS)
    preset.add_argument('--resolution', type=int, default=64, help="Beam core resolution (multiple of 16)")
    preset.add_argument('--compare', action='store_true', help="Also run classical PIC for comparison")
    preset.add_argument('--plot', action='store_true', help="Write amplitude.png and rms.png")

    converge = commands.add_parser('converge', help="Three-resolution Richardson convergence study")
    converge.add_argument('config')

    commands.add_parser('normalize', help="Print the normalized beam benchmark parameters")
    return parser


def setup_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, stream=sys.stderr)


def simulate(config: RunConfig, compare: bool, plot: bool, progress: bool) -> None:
    attach_run_log(config.output_dir)
    print(f"\n1. Configuration")
    print(f"   Problem: {config.problem.kind}")
    print(f"   Base cells: {config.base_cells}, refinements: {len(config.refinements)}")
    print(f"   dt: {config.dt:g}, t_end: {config.t_end:g}, remap every {config.remap_interval} step(s)")

    print(f"\n2. Running...")
    if compare:
        classical, remapped = run_comparison(config, progress)
        write_outputs(classical, suffix='_classical')
        write_outputs(remapped)
        print_report(classical)
        print_report(remapped)
        results, labels = [classical, remapped], ['classical', 'remapped']
    else:
        result = run_simulation(config, progress)
        write_outputs(result)
        print_report(result)
        results, labels = [result], None

    if plot:
        paths = plot_results(results, labels)
        print(f"   ✓ Plots written: {', '.join(paths)}")
    print(f"   ✓ Outputs in {config.output_dir}")


def converge(config: RunConfig) -> None:
    attach_run_log(config.output_dir)
    study = run_convergence_study(config)
    print_study(study)
    print(f"   ✓ Wrote {write_study(study, config.output_dir)}")


def normalize() -> None:
    params = BeamParameters()
    beam = normalize_beam(params)
    targets = normalized_kv_targets(params.eta)
    print("\n" + "=" * 50)
    print("NORMALIZED BEAM")
    print("=" * 50)
    print(f"Gamma:               {beam.gamma:.12g}")
    print(f"Line density:        {beam.line_density:.6e} 1/m")
    print(f"Normalized charge:   {beam.normalized_charge:.6f}")
    print(f"Normalized focusing: {beam.normalized_focusing:.6f}")
    print(f"Normalized perveance:{beam.normalized_perveance:.6f}")
    print(f"K-V radius:          {targets['a']:.6f}")
    print(f"RMS targets:         x {targets['rms_x']:g}, y {targets['rms_y']:g}, "
          f"vx {targets['rms_vx']:g}, vy {targets['rms_vy']:g}")
    print("=" * 50 + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    setup_logging(args.verbose)
    progress = not args.no_progress

    try:
        if args.command == 'normalize':
            if extra:
                raise ConfigError(f"'normalize' takes no overrides, got {extra}")
            normalize()
        elif args.command == 'preset':
            simulate(preset_config(args.name, extra, args.resolution), args.compare, args.plot, progress)
        elif args.command == 'converge':
            converge(parse_config(args.config, [*extra, f"--mode={CONVERGENCE}"]))
        else:
            config = parse_config(args.config, extra)
            if config.mode == CONVERGENCE:
                converge(config)
            else:
                simulate(config, args.compare, args.plot, progress)
    except (ConfigError, GridAlignmentError, NestingError) as exc:
        print(f"✗ Configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PICError as exc:
        print(f"✗ Numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"✗ I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:
        logger.exception("Unexpected failure")
        print(f"✗ Error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
