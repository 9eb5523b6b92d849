"""
Exception hierarchy for the remapped PIC simulator
"""


class PICError(Exception):
    """Base class for every failure raised by the simulator"""


class GridAlignmentError(PICError, ValueError):
    """Refinement region does not sit on parent-level cell faces"""


class NestingError(PICError, ValueError):
    """Refinement region is not contained in the parent level"""


class OutOfLevelError(PICError, ValueError):
    """Cell index lies outside every box of its level"""


class DomainError(PICError, ValueError):
    """Point lies outside the phase-space domain"""


class InitializationError(PICError, ValueError):
    """Initial distribution produced a non-finite value"""


class DepositionError(PICError, ValueError):
    """Particle lies outside the support of a non-periodic field grid"""


class SolvabilityError(PICError, ValueError):
    """Periodic Poisson right-hand side has a nonzero mean"""


class ShapeError(PICError, ValueError):
    """Array shape does not match the grid it belongs to"""


class PreconditionError(PICError, ValueError):
    """Input violates an operation precondition"""


class SingularKernelError(PICError, ValueError):
    """Green's function evaluated at zero distance"""


class RemapDomainError(PICError, ValueError):
    """Particle has no valid cell in the remap grid"""


class FitError(PICError, ValueError):
    """Not enough data to fit a rate"""


class AlignmentError(PICError, ValueError):
    """Grids of a Richardson pair are not nested"""


class OrderUndefinedError(PICError, ValueError):
    """Convergence order requested from a zero error"""


class DegenerateDistributionError(PICError, ValueError):
    """Distribution has zero total weight or zero RMS"""


class ConfigError(PICError, ValueError):
    """Configuration file or flag is invalid"""

    def __init__(self, message, valid_keys=None):
        if valid_keys:
            message = f"{message}\nValid keys: {', '.join(sorted(valid_keys))}"
        super().__init__(message)
        self.valid_keys = sorted(valid_keys) if valid_keys else []


class BeamEscapeError(PICError):
    """Beam particle left the free-space field grid"""


class SimulationError(PICError):
    """Time loop aborted; carries the step index and the state dump path"""

    def __init__(self, message, step=None, dump_path=None):
        details = message
        if step is not None:
            details += f" (step {step})"
        if dump_path is not None:
            details += f"; state dumped to {dump_path}"
        super().__init__(details)
        self.step = step
        self.dump_path = dump_path
