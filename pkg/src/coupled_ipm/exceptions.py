"""Exception hierarchy shared by all solver modules."""


class CoupledIPMError(Exception):
    """Base class for all errors raised by this package."""


class StructureError(CoupledIPMError):
    """Dimension mismatch, out-of-range index, or violated data invariant."""


class GenerationError(CoupledIPMError):
    """Random problem generation could not produce a valid instance."""


class InteriorError(CoupledIPMError):
    """A slack or inequality multiplier left the strict interior.

    Interior-point invariants make this unreachable in a correct run, so
    raising it signals a bug in the caller rather than a recoverable state.
    """


class SingularSystemError(CoupledIPMError):
    """The direction system is numerically singular (nonsingularity assumption violated)."""


class StallError(CoupledIPMError):
    """A line search contracted the step below the representable floor."""


class NumericalError(CoupledIPMError):
    """NaN or Inf appeared in an update."""


class LocalSolveError(CoupledIPMError):
    """A per-agent local QP solve failed to converge."""


class ConfigError(CoupledIPMError):
    """Malformed run configuration."""
