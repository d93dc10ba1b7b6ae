"""Exception and warning types."""


class RSRError(Exception):
    """Base class for errors raised by rsrkit."""


class InvalidMatrix(RSRError, ValueError):
    pass


class DimensionError(RSRError, ValueError):
    pass


class NotPSD(RSRError, ValueError):
    pass


class NotPD(RSRError, ValueError):
    pass


class InvalidDataset(RSRError, ValueError):
    pass


class DegenerateUpdate(RSRError, ArithmeticError):
    """A fixed-point update collapsed to the zero matrix."""


class InlierTMEFailed(RSRError, ArithmeticError):
    """TME on the projected inliers did not reach a nonsingular solution."""


class RegimeViolation(RSRError, ValueError):
    """The dssnr > gamma precondition does not hold."""


class DegenerateSupport(RSRError, ArithmeticError):
    pass


class InfeasibleAngles(RSRError, ValueError):
    pass


class NeedsGroundTruth(RSRError, ValueError):
    pass


class ConfigError(RSRError, ValueError):
    pass


class DegenerateSpectrumWarning(UserWarning):
    """sigma_d and sigma_{d+1} coincide, so the top-d subspace is ill-defined."""


class NotConverged(RSRError, ArithmeticError):
    """An iteration hit ``max_iter`` where a converged result was required."""
