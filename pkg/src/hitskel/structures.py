"""Pure-jump approximations of path functionals along a skeleton.

A non-anticipative functional F of a d-dimensional path is approximated by
freezing it along the skeleton: the step process with values
``F(T_n, skeleton step path)`` at the merged event times.  That object,
:class:`StepProcess`, is the input of the whole discrete calculus; its
*primary* representation is (initial value, jump increments), so the
telescoping identity ``values == initial + cumsum(increments)`` holds
bit-exactly by construction.

Two estimators are provided for the canonical structure -- the conditional
expectation of a target functional given the skeleton history:

* ``plugin``: evaluate the functional on the driving fine-grid path at the
  event times (available exactly when the skeleton was path-extracted);
* ``rejection_mc``: simulate fresh fine paths, keep those whose extracted
  first events reproduce the observed history (marks exact, times within a
  band), and average.  Exact conditioning has probability zero, so the band
  is the honest knob; feasible only for short histories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    ConfigError,
    FunctionalEvaluationError,
    ModeMismatchError,
    RejectionStarvationError,
)
from .skeleton import PATH_DRIVEN, Skeleton, extract_from_path


@dataclass(frozen=True)
class StepPath:
    """Cadlag piecewise-constant path view on [0, end_time].

    ``levels[i]`` holds from ``times[i]`` (inclusive) to the next time;
    ``origin`` holds on ``[0, times[0])``.  Also wraps fine sampled paths,
    in which case the step convention introduces an O(grid step) error.
    """

    times: np.ndarray
    levels: np.ndarray
    origin: np.ndarray
    end_time: float

    @classmethod
    def from_skeleton(cls, s: Skeleton, t=None):
        t = s.horizon if t is None else float(t)
        keep = s.times <= t
        return cls(s.times[keep], s.values()[keep], np.asarray(s.origin, float), t)

    @classmethod
    def from_grid(cls, grid_times, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        grid_times = np.asarray(grid_times, dtype=np.float64)
        return cls(grid_times, values, values[0], float(grid_times[-1]))

    @property
    def dimension(self):
        return int(self.levels.shape[1])

    def at(self, t):
        """Path value at time t (post-jump at event times), shape (d,)."""
        pos = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.origin if pos < 0 else self.levels[pos]

    def coordinate_integral(self, j, t):
        """Exact integral of the step coordinate j over [0, t]."""
        cut = int(np.searchsorted(self.times, t, side="right"))
        bounds = np.concatenate((self.times[:cut], [t]))
        if bounds.size == 1:
            return float(self.origin[j] * t)
        holds = np.concatenate(([self.origin[j]], self.levels[: cut - 1, j], [self.levels[cut - 1, j]]))
        start = np.concatenate(([0.0], bounds))
        return float(np.sum(holds[: bounds.size] * (bounds - start[: bounds.size])))

    def coordinate_max(self, j, t):
        cut = int(np.searchsorted(self.times, t, side="right"))
        m = float(self.origin[j])
        if cut:
            m = max(m, float(np.max(self.levels[:cut, j])))
        return m

    def restrict(self, t):
        """The path stopped at t; values after t are discarded."""
        keep = self.times <= t
        return StepPath(self.times[keep], self.levels[keep], self.origin, float(t))


@dataclass(frozen=True, eq=False)
class PathFunctional:
    """Named non-anticipative functional (t, path) -> real.

    ``fn`` must depend on the path only through its restriction to [0, t].
    ``at_events`` is an optional vectorized fast path: given a skeleton it
    returns (value at 0, values at all merged events) in one shot and must
    agree with ``fn`` evaluated pointwise.
    """

    name: str
    fn: callable
    at_events: callable = None

    def __call__(self, t, path):
        return float(self.fn(t, path))


@dataclass(frozen=True, eq=False)
class StepProcess:
    """Pure-jump process on a skeleton's merged event times.

    Increments are the primary data; ``values`` is defined as their running
    sum, which makes telescoping reconstruction an identity rather than an
    approximation.  When built from pointwise values, the stored values can
    therefore differ from the raw evaluations by accumulated roundoff (an
    ulp-scale effect), which is the accepted cost of the exact identity.
    """

    skeleton: Skeleton
    initial: float
    increments: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.increments.shape != (self.skeleton.n_events,):
            raise ValueError("one increment per merged event is required")

    @classmethod
    def from_values(cls, skeleton, initial, event_values, name=""):
        event_values = np.asarray(event_values, dtype=np.float64)
        increments = np.diff(np.concatenate(([float(initial)], event_values)))
        return cls(skeleton, float(initial), increments, name)

    @property
    def times(self):
        return self.skeleton.times

    @cached_property
    def values(self):
        """Values at event times: initial + running sum of increments."""
        return self.initial + np.cumsum(self.increments)

    def at(self, t):
        pos = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.initial if pos < 0 else float(self.values[pos])

    def on_grid(self, grid_times):
        pos = np.searchsorted(self.times, np.asarray(grid_times, float), side="right") - 1
        vals = np.where(pos >= 0, self.values[np.maximum(pos, 0)], self.initial)
        return vals

    def to_csv(self, path):
        """Export (event time, value) pairs, with a leading t=0 row."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# hitskel-stepprocess name=%s\n" % (self.name or "-"))
            fh.write("time,value\n")
            fh.write("%s,%s\n" % (repr(0.0), repr(float(self.initial))))
            for t, v in zip(self.times, self.values):
                fh.write("%s,%s\n" % (repr(float(t)), repr(float(v))))


def build_functional_structure(functional: PathFunctional, s: Skeleton):
    """Freeze a functional along the skeleton (values at merged events)."""
    if functional.at_events is not None:
        x0, vals = functional.at_events(s)
        return StepProcess.from_values(s, x0, vals, name=functional.name)
    path = StepPath.from_skeleton(s)
    try:
        x0 = functional(0.0, path.restrict(0.0))
    except Exception as exc:
        raise FunctionalEvaluationError(
            f"functional {functional.name!r} failed at t=0"
        ) from exc
    vals = np.empty(s.n_events)
    for n in range(s.n_events):
        try:
            vals[n] = functional(s.times[n], path)
        except Exception as exc:
            raise FunctionalEvaluationError(
                f"functional {functional.name!r} failed at event {n} "
                f"(t={s.times[n]:.6g})"
            ) from exc
    return StepProcess.from_values(s, x0, vals, name=functional.name)


def build_canonical_structure(
    functional: PathFunctional,
    s: Skeleton,
    estimator="plugin",
    grid_times=None,
    path_values=None,
    budget=20000,
    min_accept=30,
    time_band=None,
    rng=None,
):
    """Estimate the conditional-expectation structure of a target functional.

    ``plugin`` evaluates the functional on the driving fine path itself at
    the event times, which requires a path-extracted skeleton plus the grid
    it came from.  ``rejection_mc`` estimates E[X(T_n) | first n events] by
    simulating ``budget`` fresh Brownian paths per event and averaging the
    functional over those whose extracted history matches (marks exactly,
    times within ``time_band``, default ``mesh**2 / 2``).

    Raises
    ------
    ModeMismatchError
        plugin estimator without a driving path.
    ConfigError
        rejection_mc on a history longer than 12 events.
    RejectionStarvationError
        fewer than ``min_accept`` matches for some event within budget.
    """
    if estimator == "plugin":
        if s.mode != PATH_DRIVEN or grid_times is None or path_values is None:
            raise ModeMismatchError(
                "plugin estimator needs a path_driven skeleton and its driving path"
            )
        path = StepPath.from_grid(grid_times, path_values)
        x0 = functional(0.0, path.restrict(0.0))
        vals = np.array([functional(t, path) for t in s.times])
        return StepProcess.from_values(s, x0, vals, name=f"plugin[{functional.name}]")
    if estimator != "rejection_mc":
        raise ConfigError(f"unknown estimator {estimator!r}")
    if s.n_events > 12:
        raise ConfigError(
            f"rejection_mc conditions on at most 12 events, skeleton has {s.n_events}"
        )
    band = (s.mesh * s.mesh / 2.0) if time_band is None else float(time_band)
    x0 = functional(0.0, StepPath.from_skeleton(s).restrict(0.0))
    vals = np.empty(s.n_events)
    h = s.mesh * s.mesh / 100.0
    for n in range(s.n_events):
        t_obs = float(s.times[n])
        steps = max(2, int(np.ceil(t_obs / h)))
        grid = np.linspace(0.0, t_obs, steps + 1)
        acc_sum = 0.0
        acc_cnt = 0
        for _ in range(int(budget)):
            dw = rng.standard_normal((steps, s.dimension)) * np.sqrt(grid[1])
            b = np.vstack((np.zeros((1, s.dimension)), np.cumsum(dw, axis=0)))
            b += s.origin
            sim = extract_from_path(grid, b, s.mesh)
            if sim.n_events < n + 1:
                continue
            if not (
                np.array_equal(sim.coords[: n + 1], s.coords[: n + 1])
                and np.array_equal(sim.signs[: n + 1], s.signs[: n + 1])
                and np.all(np.abs(sim.times[: n + 1] - s.times[: n + 1]) <= band)
            ):
                continue
            acc_sum += functional(t_obs, StepPath.from_grid(grid, b))
            acc_cnt += 1
        if acc_cnt < min_accept:
            raise RejectionStarvationError(
                f"event {n}: {acc_cnt} acceptances < {min_accept} within budget {budget}"
            )
        vals[n] = acc_sum / acc_cnt
    return StepProcess.from_values(s, x0, vals, name=f"rejection[{functional.name}]")


# -- built-in functionals and the registry --------------------------------


def _coordinate(j=0):
    def at_events(s):
        return float(s.origin[j]), s.values()[:, j]

    return PathFunctional("coordinate", lambda t, p: p.at(t)[j], at_events)


def _square_minus_time(j=0):
    def at_events(s):
        return float(s.origin[j]) ** 2, s.values()[:, j] ** 2 - s.times

    return PathFunctional(
        "square_minus_time", lambda t, p: p.at(t)[j] ** 2 - t, at_events
    )


def _running_integral(j=0):
    def at_events(s):
        lev = s.values()[:, j]
        holds = np.concatenate(([float(s.origin[j])], lev[:-1]))
        dt = np.diff(np.concatenate(([0.0], s.times)))
        return 0.0, np.cumsum(holds * dt)

    return PathFunctional(
        "running_integral", lambda t, p: p.coordinate_integral(j, t), at_events
    )


def _running_max(j=0):
    def at_events(s):
        lev = s.values()[:, j]
        base = float(s.origin[j])
        return base, np.maximum(np.maximum.accumulate(lev), base)

    return PathFunctional("running_max", lambda t, p: p.coordinate_max(j, t), at_events)


def _clock():
    def at_events(s):
        return 0.0, s.times.copy()

    return PathFunctional("time", lambda t, p: t, at_events)


def _square(j=0):
    def at_events(s):
        return float(s.origin[j]) ** 2, s.values()[:, j] ** 2

    return PathFunctional("square", lambda t, p: p.at(t)[j] ** 2, at_events)


def _put(strike=1.0, j=0):
    def at_events(s):
        lev = s.values()[:, j]
        return max(strike - abs(float(s.origin[j])), 0.0), np.maximum(
            strike - np.abs(lev), 0.0
        )

    return PathFunctional(
        "put", lambda t, p: max(strike - abs(p.at(t)[j]), 0.0), at_events
    )


def _constant(value=0.0):
    def at_events(s):
        return float(value), np.full(s.n_events, float(value))

    return PathFunctional("constant", lambda t, p: float(value), at_events)


_REGISTRY = {
    "coordinate": _coordinate,
    "square_minus_time": _square_minus_time,
    "running_integral": _running_integral,
    "running_max": _running_max,
    "time": _clock,
    "square": _square,
    "put": _put,
    "constant": _constant,
}


def register(name, factory):
    """Add a functional factory (callable returning a PathFunctional)."""
    if name in _REGISTRY:
        raise ConfigError(f"functional {name!r} already registered")
    _REGISTRY[name] = factory


def get_functional(name, **params):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(
            f"unknown functional {name!r}; known: {sorted(_REGISTRY)}"
        ) from None
    return factory(**params)


def list_functionals():
    return sorted(_REGISTRY)
