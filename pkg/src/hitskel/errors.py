"""Semantic exception hierarchy.

Public functions raise these instead of bare ValueError/RuntimeError so that
callers (and the CLI) can map failure modes to distinct exit statuses.
"""


class HitskelError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HitskelError, ValueError):
    """A config file or parameter set violates the documented contract."""


class GridTooCoarseError(HitskelError, ValueError):
    """Driving-path grid step h exceeds eps**2 / 100; crossings would be missed."""


class ModeMismatchError(HitskelError, ValueError):
    """Operation needs a driving path but the skeleton is intrinsic (or vice versa)."""


class NumericalUnderflowError(HitskelError, FloatingPointError):
    """Conditional survival mass below 1e-30; residual law cannot be resolved."""


class QuadratureError(HitskelError, ArithmeticError):
    """An adaptive quadrature failed to converge to the requested tolerance."""


class FunctionalEvaluationError(HitskelError, RuntimeError):
    """A user functional raised while being evaluated on a step path."""


class RejectionStarvationError(HitskelError, RuntimeError):
    """A rejection sampler produced fewer than the minimum acceptances."""


class MCBudgetError(HitskelError, RuntimeError):
    """A Monte Carlo estimate missed its requested standard-error tolerance."""


class HorizonExceededError(HitskelError, RuntimeError):
    """A local crossing search ran off the end of the supplied path."""


class NonContractionError(HitskelError, ValueError):
    """eps**2 * Lipschitz(driver) >= 1: the implicit BSDE step is not a contraction."""


class OracleGapError(HitskelError, RuntimeError):
    """A computed value deviates from its configured reference beyond tolerance."""


class TerminalMismatchError(HitskelError, ValueError):
    """An energy-comparison perturbation fails the zero-integral constraint."""
