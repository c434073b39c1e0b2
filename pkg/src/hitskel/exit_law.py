"""Law of the first exit time of standard Brownian motion from [-1, 1].

Everything in the package reduces to this single distribution: a hitting
event of a mesh-``eps`` skeleton happens after ``eps**2 * tau`` where tau is
the exit time of a standard Brownian motion started at the centre of
[-1, 1].  This module evaluates the distribution (survival, density, hazard,
cumulative hazard), inverts it (quantile, sampling) and provides the
age-conditioned residual law used by the renewal construction.

Evaluation is delegated to the backend kernels (numba or numpy, see
``hitskel.backend``); this wrapper adds array handling, validation and the
underflow guard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .errors import NumericalUnderflowError, QuadratureError

#: Right end of the sampling bracket, in scaled time units.  The survival
#: probability there is ~9e-33, far below the inverse-CDF resolution, so
#: draws are capped at this value.
TAIL_TIME = 60.0

#: Asymptotic hazard rate; also the spectral gap of the half Laplacian on
#: [-1, 1] with absorbing ends.
ASYMPTOTIC_HAZARD = float(np.pi**2 / 8.0)

#: Survival mass below which the age-conditioned residual law is no longer
#: resolvable in double precision.
_UNDERFLOW_FLOOR = 1e-30

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _map_scalar(fn, t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return float(fn(float(t)))
    out = np.empty(t.shape)
    flat = t.ravel()
    oflat = out.ravel()
    for i in range(flat.size):
        oflat[i] = fn(float(flat[i]))
    return out


@dataclass(frozen=True)
class ExitLaw:
    """First-exit-time distribution of standard BM from [-1, 1].

    Parameters
    ----------
    cdf_tolerance : float
        Bisection stops once the survival value at the midpoint is within
        this distance of the target.
    max_iterations : int
        Hard cap on bisection steps per draw.
    """

    cdf_tolerance: float = 1e-12
    max_iterations: int = 200

    #: Exact first and second moments (from the classical moment ODEs).
    mean: float = 1.0
    second_moment: float = 5.0 / 3.0

    def __post_init__(self):
        if not (0.0 < self.cdf_tolerance < 1.0):
            raise ValueError("cdf_tolerance must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")

    # -- pointwise evaluation -------------------------------------------

    def survival(self, t):
        """P(tau > t); 1 for t <= 0."""
        return _map_scalar(kernels.survival, t)

    def cdf(self, t):
        return 1.0 - self.survival(t)

    def density(self, t):
        return _map_scalar(kernels.density, t)

    def hazard(self, t):
        """density / survival; increases to ``ASYMPTOTIC_HAZARD``."""
        return _map_scalar(kernels.hazard, t)

    def cumulative_hazard(self, t):
        """-log P(tau > t), evaluated in log space (no underflow)."""
        return _map_scalar(lambda s: -kernels.log_survival(s), t)

    # -- inversion and sampling ------------------------------------------

    def quantile(self, p):
        """t with P(tau <= t) = p, by bisection on the survival function."""
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        if np.any((p < 0.0) | (p > 1.0)):
            raise ValueError("probabilities must lie in [0, 1]")
        out = kernels.sample_taus(
            np.ascontiguousarray(1.0 - p), self.cdf_tolerance, self.max_iterations
        )
        return out if out.size > 1 else float(out[0])

    def sample(self, n, rng):
        """n independent draws of tau using ``rng`` (numpy Generator)."""
        u = rng.random(np.int64(n))
        return kernels.sample_taus(u, self.cdf_tolerance, self.max_iterations)

    def conditional_residual(self, elapsed, rng):
        """Draws of (tau - e | tau > e) for each age e in ``elapsed``.

        Raises
        ------
        NumericalUnderflowError
            If some survival mass P(tau > e) is below 1e-30, i.e. the
            conditioning event is too rare to resolve.
        """
        elapsed = np.atleast_1d(np.asarray(elapsed, dtype=np.float64))
        if np.any(elapsed < 0.0):
            raise ValueError("elapsed ages must be nonnegative")
        logs = self.cumulative_hazard(elapsed)
        if np.any(logs > -np.log(_UNDERFLOW_FLOOR)):
            worst = float(np.max(elapsed))
            raise NumericalUnderflowError(
                f"survival mass underflow at age {worst:.6g}: "
                f"P(tau > age) < {_UNDERFLOW_FLOOR:g}"
            )
        u = rng.random(elapsed.size)
        return kernels.conditional_taus(
            u, elapsed, self.cdf_tolerance, self.max_iterations
        )

    # -- quadrature -------------------------------------------------------

    def integrate_hazard(self, a, b, rtol=1e-10, max_depth=40):
        """Adaptive Gauss-Legendre integral of the hazard rate over [a, b].

        Exists alongside ``cumulative_hazard`` deliberately: the bracket
        process is *defined* through a time integral of the hazard, so the
        package computes it that way and the closed log-survival form serves
        as an independent check in the tests.
        """
        if b < a:
            raise ValueError("integration bounds must satisfy a <= b")
        if b == a:
            return 0.0
        return self._adaptive(float(a), float(b), rtol, max_depth)

    def _gl(self, a, b):
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        acc = 0.0
        for k in range(_GL_NODES.size):
            acc += _GL_WEIGHTS[k] * kernels.hazard(mid + half * _GL_NODES[k])
        return acc * half

    def _adaptive(self, a, b, rtol, depth):
        whole = self._gl(a, b)
        mid = 0.5 * (a + b)
        left = self._gl(a, mid)
        right = self._gl(mid, b)
        refined = left + right
        if abs(refined - whole) <= rtol * (abs(refined) + 1e-300):
            return refined
        if depth <= 0:
            raise QuadratureError(
                f"hazard integral failed to converge on [{a:.6g}, {b:.6g}]"
            )
        return self._adaptive(a, mid, rtol, depth - 1) + self._adaptive(
            mid, b, rtol, depth - 1
        )
