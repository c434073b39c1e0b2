"""Conditional law of the next event given the skeleton history.

Because each coordinate of the skeleton is an independent renewal process
with the scaled exit-time law, the one-step conditional distribution of
(waiting time, mark) given everything observed so far has a concrete
sampler: draw, for every coordinate, a residual life conditioned on its
current age; the next event happens at the smallest residual, in that
coordinate, with an independent fair sign.  This realizes the abstract
one-step disintegration constructively and is what the pathwise generator
integrates against.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exit_law import ExitLaw
from .skeleton import Mark, Skeleton


@dataclass(frozen=True)
class History:
    """Ordered (waiting time, mark) pairs on the merged event clock."""

    dimension: int
    deltas: np.ndarray
    coords: np.ndarray
    signs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "deltas", np.asarray(self.deltas, dtype=np.float64))
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.int64))
        object.__setattr__(self, "signs", np.asarray(self.signs, dtype=np.int64))
        if np.any(self.deltas <= 0.0):
            raise ValueError("waiting times must be positive")
        if self.coords.size and not (
            0 <= self.coords.min() and self.coords.max() < self.dimension
        ):
            raise ValueError("mark coordinates out of range")
        if np.any(np.abs(self.signs) != 1):
            raise ValueError("mark signs must be +-1")

    @classmethod
    def empty(cls, dimension):
        return cls(
            dimension,
            np.empty(0),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
        )

    @classmethod
    def from_skeleton(cls, s: Skeleton, n=None):
        """First n merged events of a skeleton (all of them by default)."""
        n = s.n_events if n is None else int(n)
        times = s.times[:n]
        deltas = np.diff(np.concatenate(([0.0], times)))
        return cls(s.dimension, deltas, s.coords[:n], s.signs[:n])

    @property
    def n_events(self):
        return int(self.deltas.size)

    @cached_property
    def times(self):
        return np.cumsum(self.deltas)

    @property
    def total_time(self):
        return float(self.times[-1]) if self.n_events else 0.0

    def mark(self, i):
        return Mark(int(self.coords[i]), int(self.signs[i]))

    def elapsed(self):
        """Real-time age of each coordinate's renewal clock at the end."""
        out = np.full(self.dimension, self.total_time)
        for j in range(self.dimension):
            idx = np.flatnonzero(self.coords == j)
            if idx.size:
                out[j] = self.total_time - self.times[idx[-1]]
        return out

    def append(self, delta, mark: Mark):
        return History(
            self.dimension,
            np.append(self.deltas, float(delta)),
            np.append(self.coords, mark.coordinate),
            np.append(self.signs, mark.sign),
        )


def residual_sample(elapsed, mesh, law=None, rng=None):
    """Residual waiting times with law ``mesh**2 * (tau - e | tau > e)``.

    ``elapsed`` is in real time units; ``e = elapsed / mesh**2`` is the age
    on the scaled clock.  Scalar in, scalar out; arrays map elementwise.

    Raises
    ------
    NumericalUnderflowError
        When the survival mass at some age underflows (propagated from
        :meth:`ExitLaw.conditional_residual`).
    """
    law = law if law is not None else ExitLaw()
    scale = mesh * mesh
    elapsed = np.asarray(elapsed, dtype=np.float64)
    scalar = elapsed.ndim == 0
    res = scale * law.conditional_residual(np.atleast_1d(elapsed) / scale, rng)
    return float(res[0]) if scalar else res


def next_event_sample(history: History, mesh, law=None, rng=None):
    """One draw of (waiting time, mark) for the next merged event.

    Residual lives are drawn per coordinate conditioned on the history's
    ages; the minimum wins (ties, a probability-zero event, go to the lower
    coordinate) and the sign is an independent fair flip drawn afterwards.
    """
    law = law if law is not None else ExitLaw()
    res = residual_sample(history.elapsed(), mesh, law, rng)
    j = int(np.argmin(res))
    sign = int(rng.integers(0, 2)) * 2 - 1
    return float(res[j]), Mark(j, sign)


def next_event_batch(history: History, mesh, size, law=None, rng=None):
    """``size`` independent draws of the next (waiting time, coordinate, sign).

    Vectorized version of :func:`next_event_sample` for Monte Carlo
    integration against the one-step conditional law; all residual uniforms
    are consumed in one C-ordered block, then all signs, so the stream
    layout is reproducible.  Returns (deltas, coords, signs) arrays.
    """
    law = law if law is not None else ExitLaw()
    scale = mesh * mesh
    ages = np.tile(history.elapsed() / scale, int(size))
    res = law.conditional_residual(ages, rng).reshape(int(size), history.dimension)
    coords = np.argmin(res, axis=1)
    deltas = scale * res[np.arange(int(size)), coords]
    signs = rng.integers(0, 2, size=int(size), dtype=np.int64) * 2 - 1
    return deltas, coords.astype(np.int64), signs
