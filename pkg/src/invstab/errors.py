"""Exception types shared across the toolkit."""


class InvstabError(Exception):
    """Base class for toolkit errors."""


class SpaceMismatch(InvstabError):
    """Two windows or systems live on different model spaces."""


class WindowExhausted(InvstabError):
    """A shift or series step ran past the available window range."""


class RankCollapse(InvstabError):
    """A derivative killed part of a subspace (seed meets the kernel)."""


class WraparoundError(InvstabError):
    """A displacement is too large for a single-valued log on the torus."""


class CoverageGap(InvstabError):
    """A cover does not reach every sampled window with positive margin."""


class MonteCarloUnderflow(InvstabError):
    """The smoothing normalizer fell below the density guard."""


class DivergenceError(InvstabError):
    """A fixed-point iteration left its contraction ball or stopped contracting."""


class AngleGuardViolation(InvstabError):
    """A plane-field iterate crossed the angle guard to the stable family."""


class NotHyperbolicError(InvstabError):
    """Measured decay rate reached 1; no geometric envelope exists."""


class ConfigError(InvstabError):
    """Invalid experiment configuration."""
