"""
Benchmark Problems

Initial distributions, external fields and beam mathematics for the three
benchmarks: linear Landau damping, the two-stream instability and a
semi-Gaussian beam focused as its equivalent K-V beam.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import constants
from scipy.integrate import solve_ivp

from errors import DegenerateDistributionError, PreconditionError
from particles import ParticleSet

logger = logging.getLogger(__name__)

LANDAU = 'landau'
TWO_STREAM = 'two_stream'
SEMI_GAUSSIAN = 'semi_gaussian'
PERIODIC_BC = 'periodic'
FREESPACE_BC = 'freespace'


def landau_f0(x, y, vx, vy, alpha: float = 0.05, k=(0.5, 0.5)):
    """Maxwellian with a cos(kx x) cos(ky y) density perturbation"""
    kx, ky = k
    return (np.exp(-(vx**2 + vy**2) / 2.0) / (2.0 * np.pi)
            * (1.0 + alpha * np.cos(kx * x) * np.cos(ky * y)))


def twostream_f0(x, y, vx, vy, alpha: float = 0.05, kx: float = 0.5):
    """Double-humped distribution in vx with a cos(kx x) density perturbation"""
    return (np.exp(-(vx**2 + vy**2) / 2.0) / (12.0 * np.pi)
            * (1.0 + alpha * np.cos(kx * x)) * (1.0 + 5.0 * vx**2))


def _check_eta(eta: float) -> None:
    if not 0.0 < eta < 1.0:
        raise PreconditionError(f"Tune depression must lie in (0, 1), got {eta}")


def semigaussian_f0(x, y, vx, vy, eta: float = 0.5):
    """Uniform disc of unit radius in space, Gaussian in velocity"""
    _check_eta(eta)
    amplitude = 4.0 * (1.0 - eta**2) / (np.pi * eta**2)
    inside = np.asarray(x)**2 + np.asarray(y)**2 <= 1.0
    return np.where(inside, amplitude * np.exp(-(vx**2 + vy**2) / 2.0), 0.0)


def matching_field(x, y, eta: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """Linear focusing field -(4 / eta^2)(x, y)"""
    _check_eta(eta)
    coefficient = 4.0 / eta**2
    return -coefficient * np.asarray(x, dtype=float), -coefficient * np.asarray(y, dtype=float)


@dataclass(frozen=True)
class ProblemSpec:
    """
    One benchmark: distribution, external field, boundary kind and species

    Periodic problems live on [0, 2pi/kx] x [0, 2pi/ky]; the beam problem uses
    the free-space field solver.
    """
    kind: str
    alpha: float = 0.05
    k: Tuple[float, float] = (0.5, 0.5)
    v_max: float = 6.0
    eta: float = 0.5
    domain_lo: Tuple[float, ...] = ()
    domain_hi: Tuple[float, ...] = ()
    bc: str = PERIODIC_BC
    species_sign: int = 1

    def __post_init__(self):
        if self.kind not in PROBLEMS:
            raise PreconditionError(f"Unknown problem kind '{self.kind}'. Known: {', '.join(PROBLEMS)}")
        if self.v_max <= 0:
            raise PreconditionError(f"v_max must be positive, got {self.v_max}")
        if self.kind == SEMI_GAUSSIAN:
            _check_eta(self.eta)
        if not self.domain_lo:
            lo, hi = self.default_domain()
            object.__setattr__(self, 'domain_lo', lo)
            object.__setattr__(self, 'domain_hi', hi)
        object.__setattr__(self, 'domain_lo', tuple(float(v) for v in self.domain_lo))
        object.__setattr__(self, 'domain_hi', tuple(float(v) for v in self.domain_hi))
        if self.bc == PERIODIC_BC and self.kind == SEMI_GAUSSIAN:
            raise PreconditionError("The beam problem needs free-space boundaries")
        if self.bc == FREESPACE_BC and self.kind != SEMI_GAUSSIAN:
            raise PreconditionError(f"Problem '{self.kind}' needs periodic boundaries")

    @property
    def periodic(self) -> bool:
        return self.bc == PERIODIC_BC

    def default_domain(self) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
        if self.kind == SEMI_GAUSSIAN:
            return (-10.0, -10.0, -self.v_max, -self.v_max), (10.0, 10.0, self.v_max, self.v_max)
        lx, ly = 2.0 * np.pi / self.k[0], 2.0 * np.pi / self.k[1]
        return (0.0, 0.0, -self.v_max, -self.v_max), (lx, ly, self.v_max, self.v_max)

    def f0(self) -> Callable:
        """Vectorized initial distribution f0(x, y, vx, vy)"""
        if self.kind == LANDAU:
            return lambda x, y, vx, vy: landau_f0(x, y, vx, vy, self.alpha, self.k)
        if self.kind == TWO_STREAM:
            return lambda x, y, vx, vy: twostream_f0(x, y, vx, vy, self.alpha, self.k[0])
        return lambda x, y, vx, vy: semigaussian_f0(x, y, vx, vy, self.eta)

    def external_field(self) -> Optional[Callable]:
        """E_ext(x, y, t), or None when there is no external field"""
        if self.kind != SEMI_GAUSSIAN:
            return None
        return lambda x, y, t: matching_field(x, y, self.eta)


PROBLEMS: Dict[str, str] = {
    LANDAU: "Linear Landau damping, periodic, electrons on a neutralizing background",
    TWO_STREAM: "Two-stream instability, periodic, electrons on a neutralizing background",
    SEMI_GAUSSIAN: "Semi-Gaussian beam in a linear focusing field, free space",
}


def make_problem(kind: str, **overrides) -> ProblemSpec:
    """ProblemSpec with the benchmark defaults of `kind`"""
    defaults = {
        LANDAU: dict(alpha=0.05, k=(0.5, 0.5), v_max=6.0, bc=PERIODIC_BC, species_sign=1),
        TWO_STREAM: dict(alpha=0.05, k=(0.5, 0.5), v_max=9.0, bc=PERIODIC_BC, species_sign=1),
        SEMI_GAUSSIAN: dict(eta=0.5, v_max=10.0, bc=FREESPACE_BC, species_sign=0),
    }
    if kind not in defaults:
        raise PreconditionError(f"Unknown problem kind '{kind}'. Known: {', '.join(PROBLEMS)}")
    params = {**defaults[kind], **overrides}
    return ProblemSpec(kind=kind, **params)


# ---------------------------------------------------------------------------
# K-V beam mathematics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KVBeam:
    """
    Matched K-V beam

    `k` is the focusing wavenumber: the envelope equation reads
    a'' + k^2 a - 2K/(a + b) - eps^2/a^3 = 0.
    """
    emittance_x: float
    emittance_y: float
    a: float
    b: float
    perveance: float
    k: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise PreconditionError(f"K-V radii must be positive, got a={self.a}, b={self.b}")

    @classmethod
    def matched(cls, perveance: float, k: float, emittance: float) -> 'KVBeam':
        a = kv_envelope_radius(perveance, k, emittance)
        return cls(emittance, emittance, a, a, perveance, k)

    def residual(self) -> float:
        return kv_envelope_residual(self.a, self.b, self.perveance, self.k, self.emittance_x)

    def rms_targets(self) -> Tuple[float, float, float, float]:
        """(x, y, vx, vy) RMS of the K-V distribution"""
        return (self.a / 2.0, self.b / 2.0,
                self.emittance_x / (2.0 * self.a), self.emittance_y / (2.0 * self.b))


def kv_envelope_radius(K: float, k: float, emittance: float) -> float:
    """
    Matched radius of a round K-V beam

    Positive root of k^2 a^4 - K a^2 - eps^2 = 0.
    """
    if k == 0:
        raise ZeroDivisionError("Focusing strength k must be nonzero")
    if k < 0 or emittance <= 0 or K < 0:
        raise PreconditionError(f"Need k > 0, emittance > 0, K >= 0; got k={k}, emittance={emittance}, K={K}")
    return float(np.sqrt((K + np.sqrt(K**2 + 4.0 * k**2 * emittance**2)) / (2.0 * k**2)))


def kv_envelope_residual(a: float, b: float, K: float, k: float, emittance: float) -> float:
    """Left-hand side of the stationary envelope equation k^2 a - 2K/(a+b) - eps^2/a^3"""
    return float(k**2 * a - 2.0 * K / (a + b) - emittance**2 / a**3)


def equivalent_beam_scaling(moments: Tuple[float, float, float, float],
                            beam: KVBeam) -> Tuple[float, float, float, float]:
    """
    Scale factors (a', b', c', d') that give a distribution the K-V RMS values

    Args:
        moments: (x, y, vx, vy) RMS of the distribution to scale
        beam: Target K-V beam

    Returns:
        Factors such that f(x, y, vx, vy) = N f'(x/a', y/b', vx/c', vy/d') is equivalent
    """
    moments = tuple(float(m) for m in moments)
    if any(m <= 0 for m in moments):
        raise DegenerateDistributionError(f"RMS moments must be positive, got {moments}")
    targets = beam.rms_targets()
    return tuple(t / m for t, m in zip(targets, moments))


def rms(particles: ParticleSet, selector) -> float:
    """
    Weighted RMS of one coordinate

    Args:
        particles: Particle set
        selector: Attribute name ('x', 'y', 'vx', 'vy') or callable ParticleSet -> array
    """
    if len(particles) == 0:
        raise DegenerateDistributionError("RMS of an empty particle set is undefined")
    total = particles.total_charge
    if total <= 0:
        raise DegenerateDistributionError(f"RMS needs a positive total weight, got {total:.3e}")
    values = selector(particles) if callable(selector) else getattr(particles, selector)
    return float(np.sqrt(np.dot(particles.q, np.asarray(values) ** 2) / total))


def normalized_kv_targets(eta: float = 0.5) -> Dict[str, float]:
    """
    Equivalent K-V beam of the normalized beam problem

    With x0 = a and v0 = eps v_b / (2a) the matched radius is 1, the
    emittance 2 and the focusing wavenumber 2/eta.
    """
    _check_eta(eta)
    a, emittance = 1.0, 2.0
    k = emittance / (eta * a**2)
    perveance = k**2 * a**2 - emittance**2 / a**2
    beam = KVBeam(emittance, emittance, a, a, perveance, k)
    x_rms, y_rms, vx_rms, vy_rms = beam.rms_targets()
    return {'a': a, 'emittance': emittance, 'k': k, 'perveance': perveance,
            'rms_x': x_rms, 'rms_y': y_rms, 'rms_vx': vx_rms, 'rms_vy': vy_rms,
            'residual': beam.residual()}


def integrate_envelope(beam: KVBeam, t_end: float, n_samples: int = 200,
                       a0: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Integrate the round-beam envelope equation from rest

    Returns:
        (t, a(t)) sampled at n_samples points on [0, t_end]
    """
    a_start = beam.a if a0 is None else a0

    def rhs(_, state):
        a, da = state
        return [da, -beam.k**2 * a + beam.perveance / a + beam.emittance_x**2 / a**3]

    times = np.linspace(0.0, t_end, n_samples)
    if t_end <= 0:
        return times[:1], np.array([a_start])
    solution = solve_ivp(rhs, (0.0, t_end), [a_start, 0.0], t_eval=times, rtol=1e-10, atol=1e-12)
    return solution.t, solution.y[0]


# ---------------------------------------------------------------------------
# Physical parameters of the potassium beam
# ---------------------------------------------------------------------------

POTASSIUM_MASS = 39.0983 * constants.atomic_mass


@dataclass(frozen=True)
class BeamParameters:
    """Physical beam: current [A], velocity [m/s], radius [m], tune depression"""
    current: float = 0.2
    velocity: float = 0.63e6
    radius: float = 0.02
    eta: float = 0.5
    mass: float = POTASSIUM_MASS
    charge: float = constants.e


@dataclass(frozen=True)
class NormalizedBeam:
    """Physical beam quantities and the constants that make them dimensionless"""
    gamma: float
    line_density: float
    perveance: float
    focusing: float
    emittance: float
    x0: float
    v0: float
    z0: float
    N0: float
    E0: float
    k0: float
    normalized_charge: float
    normalized_focusing: float
    normalized_perveance: float


def normalize_beam(params: BeamParameters = BeamParameters()) -> NormalizedBeam:
    """
    Convert a physical beam into the normalized units of the simulation

    The matched focusing k_x = K / (a^2 (1 - eta^2)) multiplies the envelope
    a, and the emittance follows from eta = eps / (a^2 sqrt(k_x)).
    """
    _check_eta(params.eta)
    q, m, a, vb = params.charge, params.mass, params.radius, params.velocity
    gamma = 1.0 / np.sqrt(1.0 - (vb / constants.c) ** 2)
    line_density = params.current / (q * vb)
    perveance = q**2 * line_density / (2.0 * np.pi * constants.epsilon_0 * gamma**3 * m * vb**2)
    focusing = perveance / (a**2 * (1.0 - params.eta**2))
    emittance = params.eta * a**2 * np.sqrt(focusing)

    x0 = a
    v0 = emittance * vb / (2.0 * a)
    z0 = x0 * vb / v0
    N0 = constants.epsilon_0 * m * v0**2 / (q**2 * x0**2)
    E0 = m * v0**2 / (q * x0)
    k0 = gamma * m * v0**2 / (q * x0**2)

    normalized = NormalizedBeam(
        gamma=gamma,
        line_density=line_density,
        perveance=perveance,
        focusing=focusing,
        emittance=emittance,
        x0=x0, v0=v0, z0=z0, N0=N0, E0=E0, k0=k0,
        normalized_charge=line_density / (N0 * x0**2 * gamma**3),
        normalized_focusing=gamma * m * focusing * vb**2 / q / k0,
        normalized_perveance=perveance * z0**2 / x0**2,
    )
    logger.debug(f"Normalized beam: charge {normalized.normalized_charge:.6g}, "
                 f"focusing {normalized.normalized_focusing:.6g}")
    return normalized
