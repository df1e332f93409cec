"""Exception types raised by the estimation routines."""


class EstimationError(Exception):
    """Base class for solver and data-adequacy failures."""


class InsufficientLocalData(EstimationError):
    """Fewer weighted points in the kernel window than coefficients to fit."""


class SingularGram(EstimationError):
    """Local Gram (or basis) matrix remains ill-conditioned after jitter."""


class EmptyAnnulus(EstimationError):
    """No observations carry outrigger-kernel weight."""


class SingularJacobian(EstimationError):
    """Scoring information matrix is singular or ill-conditioned."""


class NonConvergence(EstimationError):
    """No scoring run produced a root within the iteration budget."""


class TooFewResiduals(EstimationError):
    """Not enough residuals to fit a score-matching spline."""
