"""
Run Configuration

Line-oriented `key = value` files with `#` comments. Repeated `refinement`
lines add refinement levels:

    refinement = lo0,lo1,lo2,lo3 : hi0,hi1,hi2,hi3 : r0,r1,r2,r3

Command-line `--key=value` flags override file keys. The rendered manifest
uses the same format, so a manifest reproduces its run.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import parallel
from errors import ConfigError, PreconditionError
from phase_grid import Refinement
from problems import LANDAU, PROBLEMS, SEMI_GAUSSIAN, TWO_STREAM, ProblemSpec, make_problem
from remap import PLASMA_PERIODIC, RemapConfig

logger = logging.getLogger(__name__)

VERSION = '1.0.0'
SINGLE = 'single'
CONVERGENCE = 'convergence'

VALID_KEYS = (
    'problem', 'alpha', 'kx', 'ky', 'v_max', 'eta', 'species_sign',
    'base_cells', 'refinement', 'dt', 't_end',
    'remap_interval', 'threshold', 'positivity_iterations', 'redistribution_radius',
    'field_ratio', 'inner_pad', 'outer_pad',
    'output_dir', 'snapshot_times', 'projection_cells', 'seed',
    'mode', 'levels', 'workers',
)


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; defaults are the Landau benchmark numerics"""
    problem: ProblemSpec
    base_cells: Tuple[int, int, int, int] = (32, 32, 32, 32)
    refinements: Tuple[Refinement, ...] = ()
    dt: float = 0.125
    t_end: float = 20.0
    remap_interval: int = 5
    threshold: float = 1e-9
    positivity_iterations: int = 3
    redistribution_radius: int = 1
    field_ratio: int = 2
    inner_pad: int = 2
    outer_pad: int = 0
    output_dir: str = 'output'
    snapshot_times: Tuple[float, ...] = ()
    projection_cells: Tuple[int, int] = (64, 64)
    seed: int = 0
    mode: str = SINGLE
    levels: int = 3
    workers: int = field(default_factory=parallel.default_workers)

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ConfigError(f"t_end must be >= 0, got {self.t_end}")
        if self.remap_interval < 0:
            raise ConfigError(f"remap_interval must be >= 0 (0 disables remapping), got {self.remap_interval}")
        if self.threshold < 0:
            raise ConfigError(f"threshold must be >= 0, got {self.threshold}")
        if self.positivity_iterations < 0:
            raise ConfigError(f"positivity_iterations must be >= 0, got {self.positivity_iterations}")
        if self.redistribution_radius < 1:
            raise ConfigError(f"redistribution_radius must be >= 1, got {self.redistribution_radius}")
        if self.field_ratio < 1:
            raise ConfigError(f"field_ratio must be >= 1, got {self.field_ratio}")
        if len(self.base_cells) != 4 or any(n < 1 for n in self.base_cells):
            raise ConfigError(f"base_cells must be four integers >= 1, got {self.base_cells}")
        if self.mode not in (SINGLE, CONVERGENCE):
            raise ConfigError(f"mode must be '{SINGLE}' or '{CONVERGENCE}', got '{self.mode}'")
        if self.levels < 3:
            raise ConfigError(f"levels must be >= 3, got {self.levels}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.inner_pad < 1 or self.outer_pad < 0:
            raise ConfigError(f"inner_pad must be >= 1 and outer_pad >= 0, got {self.inner_pad}, {self.outer_pad}")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.dt + 1e-9))

    @property
    def remap(self) -> Optional[RemapConfig]:
        """Remap settings, None in classical-PIC mode"""
        if self.remap_interval == 0:
            return None
        periodic = PLASMA_PERIODIC if self.problem.periodic else (False,) * 4
        return RemapConfig(self.remap_interval, self.threshold, self.positivity_iterations,
                           self.redistribution_radius, periodic, self.workers)

    def refined(self, factor: int) -> 'RunConfig':
        """Same run with every base cell count multiplied and dt divided by factor"""
        return replace(self, base_cells=tuple(n * factor for n in self.base_cells), dt=self.dt / factor)


def _floats(text: str, key: str, count: Optional[int] = None) -> Tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise ConfigError(f"'{key}' expects comma-separated numbers, got '{text}'")
    if count is not None and len(values) != count:
        raise ConfigError(f"'{key}' expects {count} values, got {len(values)}")
    return values


def _ints(text: str, key: str, count: Optional[int] = None) -> Tuple[int, ...]:
    values = _floats(text, key, count)
    if any(v != int(v) for v in values):
        raise ConfigError(f"'{key}' expects integers, got '{text}'")
    return tuple(int(v) for v in values)


def _scalar(text: str, key: str, kind):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"'{key}' expects a {kind.__name__}, got '{text}'")


def _refinement(text: str) -> Refinement:
    parts = text.split(':')
    if len(parts) != 3:
        raise ConfigError(f"'refinement' expects 'lo : hi : ratio', got '{text}'")
    return Refinement(_floats(parts[0], 'refinement', 4), _floats(parts[1], 'refinement', 4),
                      _ints(parts[2], 'refinement', 4))


def read_pairs(text: str) -> List[Tuple[str, str]]:
    """(key, value) pairs of a config text in file order"""
    pairs = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"Line {number}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in VALID_KEYS:
            raise ConfigError(f"Line {number}: unknown key '{key}'", VALID_KEYS)
        pairs.append((key, value))
    return pairs


def parse_flags(flags: Sequence[str]) -> List[Tuple[str, str]]:
    """Turn ['--dt=0.1', ...] into (key, value) pairs"""
    pairs = []
    for flag in flags:
        if not flag.startswith('--') or '=' not in flag:
            raise ConfigError(f"Override flags look like --key=value, got '{flag}'")
        key, value = flag[2:].split('=', 1)
        key = key.replace('-', '_')
        if key not in VALID_KEYS:
            raise ConfigError(f"Unknown flag '--{key}'", VALID_KEYS)
        pairs.append((key, value))
    return pairs


def build_config(pairs: Sequence[Tuple[str, str]], overrides: Sequence[Tuple[str, str]] = ()) -> RunConfig:
    """
    Validated RunConfig from file pairs and override pairs

    Later keys win. Refinement lines accumulate; refinements among the
    overrides replace those of the file.
    """
    values: Dict[str, str] = {}
    refinements: List[Refinement] = []
    override_refinements: List[Refinement] = []
    for source, target in ((pairs, refinements), (overrides, override_refinements)):
        for key, value in source:
            if key == 'refinement':
                target.append(_refinement(value))
            else:
                values[key] = value
    if override_refinements:
        refinements = override_refinements

    if 'problem' not in values:
        raise ConfigError("Configuration must set 'problem'", VALID_KEYS)
    kind = values['problem']
    if kind not in PROBLEMS:
        raise ConfigError(f"Unknown problem '{kind}'. Known: {', '.join(PROBLEMS)}")

    problem_args = {}
    if 'alpha' in values:
        problem_args['alpha'] = _scalar(values['alpha'], 'alpha', float)
    if 'kx' in values or 'ky' in values:
        problem_args['k'] = (_scalar(values.get('kx', '0.5'), 'kx', float), _scalar(values.get('ky', '0.5'), 'ky', float))
    if 'v_max' in values:
        problem_args['v_max'] = _scalar(values['v_max'], 'v_max', float)
    if 'eta' in values:
        problem_args['eta'] = _scalar(values['eta'], 'eta', float)
    if 'species_sign' in values:
        problem_args['species_sign'] = _scalar(values['species_sign'], 'species_sign', int)

    try:
        problem = make_problem(kind, **problem_args)
    except PreconditionError as exc:
        raise ConfigError(str(exc))

    run_args = {'problem': problem, 'refinements': tuple(refinements)}
    scalars = {
        'dt': float, 't_end': float, 'remap_interval': int, 'threshold': float,
        'positivity_iterations': int, 'redistribution_radius': int, 'field_ratio': int,
        'inner_pad': int, 'outer_pad': int, 'seed': int, 'levels': int, 'workers': int,
    }
    for key, kind_ in scalars.items():
        if key in values:
            run_args[key] = _scalar(values[key], key, kind_)
    if 'base_cells' in values:
        run_args['base_cells'] = _ints(values['base_cells'], 'base_cells', 4)
    if 'snapshot_times' in values:
        run_args['snapshot_times'] = _floats(values['snapshot_times'], 'snapshot_times')
    if 'projection_cells' in values:
        run_args['projection_cells'] = _ints(values['projection_cells'], 'projection_cells', 2)
    if 'output_dir' in values:
        run_args['output_dir'] = values['output_dir']
    if 'mode' in values:
        run_args['mode'] = values['mode']
    return RunConfig(**run_args)


def parse_config(path: Optional[str] = None, flags: Sequence[str] = (), text: Optional[str] = None) -> RunConfig:
    """
    Read a config file (or text) and apply --key=value overrides

    Args:
        path: Config file path
        flags: Override flags
        text: Config text used instead of a file

    Returns:
        Validated RunConfig
    """
    if path is not None:
        try:
            with open(path) as handle:
                text = handle.read()
        except OSError as exc:
            raise OSError(f"Cannot read config '{path}': {exc.strerror}") from exc
    config = build_config(read_pairs(text or ''), parse_flags(flags))
    logger.debug(f"Parsed config: problem {config.problem.kind}, {len(config.refinements)} refinement(s)")
    return config


def _join(values) -> str:
    return ','.join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def render_config(config: RunConfig) -> str:
    """Config text with every key resolved; parsing it reproduces the run"""
    p = config.problem
    lines = [
        f"# pic-remap {VERSION} run manifest",
        f"problem = {p.kind}",
        f"alpha = {p.alpha!r}",
        f"kx = {float(p.k[0])!r}",
        f"ky = {float(p.k[1])!r}",
        f"v_max = {p.v_max!r}",
        f"eta = {p.eta!r}",
        f"species_sign = {p.species_sign}",
        f"base_cells = {_join(config.base_cells)}",
    ]
    for r in config.refinements:
        lines.append(f"refinement = {_join(map(float, r.lo))} : {_join(map(float, r.hi))} : {_join(r.ratio)}")
    lines += [
        f"dt = {config.dt!r}",
        f"t_end = {config.t_end!r}",
        f"remap_interval = {config.remap_interval}",
        f"threshold = {config.threshold!r}",
        f"positivity_iterations = {config.positivity_iterations}",
        f"redistribution_radius = {config.redistribution_radius}",
        f"field_ratio = {config.field_ratio}",
        f"inner_pad = {config.inner_pad}",
        f"outer_pad = {config.outer_pad}",
        f"output_dir = {config.output_dir}",
    ]
    if config.snapshot_times:
        lines.append(f"snapshot_times = {_join(map(float, config.snapshot_times))}")
    lines += [
        f"projection_cells = {_join(config.projection_cells)}",
        f"seed = {config.seed}",
        f"mode = {config.mode}",
        f"levels = {config.levels}",
        f"workers = {config.workers}",
    ]
    return "\n".join(lines) + "\n"


PRESETS = ('landau', 'twostream', 'beam')


def preset_text(name: str, resolution: int = 64) -> str:
    """
    Config text of a benchmark preset

    Args:
        name: 'landau', 'twostream' or 'beam'
        resolution: Beam only; cells per dimension of the refined beam core spacing (multiple of 16)
    """
    length = repr(4.0 * math.pi)
    if name == 'landau':
        return (
            "# Linear Landau damping\n"
            f"problem = {LANDAU}\n"
            "alpha = 0.05\nkx = 0.5\nky = 0.5\nv_max = 6.0\n"
            "base_cells = 32,32,32,32\n"
            f"refinement = 0,0,-3,-3 : {length},{length},3,3 : 1,1,2,2\n"
            "dt = 0.125\nt_end = 20.0\n"
            "remap_interval = 5\nthreshold = 1e-9\n"
            "field_ratio = 2\n"
            "snapshot_times = 0.0,20.0\n"
            "output_dir = output/landau\n"
        )
    if name == 'twostream':
        return (
            "# Two-stream instability\n"
            f"problem = {TWO_STREAM}\n"
            "alpha = 0.05\nkx = 0.5\nky = 0.5\nv_max = 9.0\n"
            "base_cells = 32,32,32,32\n"
            f"refinement = 0,0,-4.5,-4.5 : {length},{length},4.5,4.5 : 1,1,2,2\n"
            "dt = 0.125\nt_end = 40.0\n"
            "remap_interval = 5\nthreshold = 1e-9\n"
            "field_ratio = 2\n"
            "snapshot_times = 0.0,20.0,40.0\n"
            "output_dir = output/twostream\n"
        )
    if name == 'beam':
        if resolution < 16 or resolution % 16:
            raise ConfigError(f"Beam resolution must be a positive multiple of 16, got {resolution}")
        ratio = resolution // 16
        return (
            "# Semi-Gaussian beam in its equivalent K-V focusing field\n"
            f"problem = {SEMI_GAUSSIAN}\n"
            "eta = 0.5\nv_max = 10.0\n"
            "base_cells = 16,16,16,16\n"
            f"refinement = -2.5,-2.5,-5,-5 : 2.5,2.5,5,5 : {ratio},{ratio},{ratio},{ratio}\n"
            "dt = 0.00052925\nt_end = 1.6\n"
            "remap_interval = 5\nthreshold = 1e-9\n"
            "field_ratio = 2\n"
            "snapshot_times = 0.0,1.6\n"
            f"output_dir = output/beam{resolution}\n"
        )
    raise ConfigError(f"Unknown preset '{name}'. Known: {', '.join(PRESETS)}")


def preset_config(name: str, flags: Sequence[str] = (), resolution: int = 64) -> RunConfig:
    return parse_config(text=preset_text(name, resolution), flags=flags)
