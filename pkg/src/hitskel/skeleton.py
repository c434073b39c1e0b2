"""Hitting-time skeletons of d-dimensional Brownian motion.

A skeleton at mesh ``eps`` replaces each Brownian coordinate by the
piecewise-constant walk that jumps by exactly ``+-eps`` at the successive
times the coordinate moves ``eps`` away from its last recorded level.  Two
constructions are provided:

* :func:`generate_intrinsic` -- law-exact simulation: inter-arrival times are
  ``eps**2`` times independent draws of the exit time of standard BM from
  [-1, 1], and jump signs are independent fair coin flips;
* :func:`extract_from_path` -- reads the crossing events off a supplied
  fine-grid path, keeping the walk coupled to the path within ``eps`` plus a
  grid-resolution slack.

Events are stored twice over, as per-coordinate sequences and as one merged,
time-ordered list with (coordinate, sign) marks; both views are exposed
because downstream discrete calculus sums over one or the other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .backend import kernels
from .errors import ConfigError, GridTooCoarseError, ModeMismatchError
from .exit_law import ExitLaw

#: Default mesh schedule is ``MESH_BASE * 2**-k``; the squares are summable,
#: which is what the refinement arguments need.
MESH_BASE = 0.4

INTRINSIC = "intrinsic"
PATH_DRIVEN = "path_driven"
_MODES = (INTRINSIC, PATH_DRIVEN)


def mesh_schedule(levels, base=MESH_BASE, ratio=0.5):
    """Mesh values ``base * ratio**k`` for each k in ``levels``."""
    levels = np.asarray(levels)
    if not (0.0 < ratio < 1.0):
        raise ConfigError("mesh schedule ratio must lie in (0, 1)")
    return base * ratio ** levels.astype(np.float64)


@dataclass(frozen=True)
class Mark:
    """Which coordinate jumped and in which direction (0-based coordinate)."""

    coordinate: int
    sign: int

    def __post_init__(self):
        if self.coordinate < 0:
            raise ValueError("coordinate must be nonnegative")
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")

    def encode(self):
        """Pack into one nonzero integer: sign * (coordinate + 1)."""
        return self.sign * (self.coordinate + 1)

    @classmethod
    def decode(cls, code):
        code = int(code)
        if code == 0:
            raise ValueError("0 does not encode a mark")
        return cls(coordinate=abs(code) - 1, sign=1 if code > 0 else -1)

    def vector(self, dimension):
        """Unit jump vector: +-1 in the event coordinate, zero elsewhere."""
        e = np.zeros(dimension)
        e[self.coordinate] = self.sign
        return e


@dataclass(frozen=True)
class SkeletonConfig:
    mesh: float
    horizon: float
    dimension: int = 1
    mode: str = INTRINSIC

    def __post_init__(self):
        if not self.mesh > 0.0:
            raise ConfigError(f"mesh must be positive, got {self.mesh}")
        if not self.horizon > 0.0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ConfigError(f"dimension must be a positive integer, got {self.dimension}")
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class Skeleton:
    """One realization: merged event times with (coordinate, sign) marks.

    ``scaled_gaps[n]`` is the waiting time since the *same coordinate's*
    previous event, in scaled units (real gap / mesh**2); in intrinsic mode
    these are the raw exit-time draws themselves.  ``origin`` is the level
    the walk starts from (zero when intrinsic, path start when extracted).
    Treat instances as immutable.
    """

    mesh: float
    horizon: float
    dimension: int
    mode: str
    times: np.ndarray
    coords: np.ndarray
    signs: np.ndarray
    scaled_gaps: np.ndarray
    origin: np.ndarray = None

    def __post_init__(self):
        if self.origin is None:
            object.__setattr__(self, "origin", np.zeros(self.dimension))

    # -- basic views ------------------------------------------------------

    @property
    def n_events(self):
        return int(self.times.size)

    def mark(self, n):
        return Mark(int(self.coords[n]), int(self.signs[n]))

    @cached_property
    def _coord_slices(self):
        return [np.flatnonzero(self.coords == j) for j in range(self.dimension)]

    def coordinate_events(self, j):
        """(times, signs) of coordinate j's own events, in order."""
        idx = self._coord_slices[j]
        return self.times[idx], self.signs[idx]

    @cached_property
    def walk(self):
        """Integer walk positions after each merged event, shape (n, d).

        ``origin + mesh * walk[n]`` is the skeleton value at ``times[n]``;
        integer accumulation keeps every jump magnitude exactly ``mesh``.
        """
        steps = np.zeros((self.n_events, self.dimension), dtype=np.int64)
        if self.n_events:
            steps[np.arange(self.n_events), self.coords] = self.signs
        return np.cumsum(steps, axis=0)

    def values(self):
        """Skeleton levels after each merged event, shape (n, d)."""
        return self.origin + self.mesh * self.walk

    def jump_vectors(self):
        """Jump of the walk at each merged event, shape (n, d).

        Built directly from the marks, so the nonzero entry is the float
        ``+-mesh`` exactly; differencing :meth:`values` instead can lose an
        ulp for non-dyadic mesh values.
        """
        out = np.zeros((self.n_events, self.dimension))
        if self.n_events:
            out[np.arange(self.n_events), self.coords] = self.mesh * self.signs
        return out

    def values_on_grid(self, grid_times):
        """Piecewise-constant evaluation at arbitrary times, shape (m, d)."""
        grid_times = np.asarray(grid_times, dtype=np.float64)
        pos = np.searchsorted(self.times, grid_times, side="right") - 1
        vals = np.empty((grid_times.size, self.dimension))
        levels = self.values()
        inside = pos >= 0
        vals[~inside] = self.origin
        vals[inside] = levels[pos[inside]]
        return vals

    def value_at(self, t):
        return self.values_on_grid(np.atleast_1d(t))[0]

    # -- brackets and diagnostics ----------------------------------------

    def counting(self, j, t):
        """Number of coordinate-j events up to and including time t."""
        tj, _ = self.coordinate_events(j)
        return int(np.searchsorted(tj, t, side="right"))

    def quadratic_variation(self, j, t):
        """[A_j, A_j](t) = mesh**2 * (event count); exact by construction."""
        return self.mesh * self.mesh * self.counting(j, t)

    def angle_bracket(self, j, t, law=None, rtol=1e-10):
        """Predictable compensator of the quadratic variation of coordinate j.

        Integrates the hazard rate of the scaled exit law over the age of the
        coordinate-j renewal process up to time t, interval by interval, with
        adaptive quadrature.  Equals ``mesh**2`` times the cumulative hazard
        summed over completed and partial inter-event intervals.
        """
        if t < 0:
            raise ValueError("t must be nonnegative")
        law = law if law is not None else ExitLaw()
        tj, _ = self.coordinate_events(j)
        tj = tj[tj <= t]
        scale = self.mesh * self.mesh
        bounds = np.concatenate(([0.0], tj, [t]))
        gaps = np.diff(bounds) / scale
        total = 0.0
        for g in gaps:
            if g > 0.0:
                total += law.integrate_hazard(0.0, g, rtol=rtol)
        return scale * total

    def max_increment(self):
        """Largest waiting time in the merged list, horizon edges included."""
        if self.n_events == 0:
            return float(self.horizon)
        bounds = np.concatenate(([0.0], self.times, [self.horizon]))
        return float(np.max(np.diff(bounds)))

    def ages_before_events(self):
        """Scaled per-coordinate ages just before each merged event, (n, d).

        Entry (n, j) is (times[n] - last coordinate-j event time strictly
        before times[n]) / mesh**2; coordinate clocks start at 0.  For the
        event's own coordinate this is its scaled waiting time.
        """
        n, d = self.n_events, self.dimension
        ages = np.empty((n, d))
        scale = self.mesh * self.mesh
        for j in range(d):
            tj, _ = self.coordinate_events(j)
            pos = np.searchsorted(tj, self.times, side="left") - 1
            last = np.where(pos >= 0, tj[np.maximum(pos, 0)], 0.0)
            ages[:, j] = (self.times - last) / scale
        return ages

    def ages_at(self, t):
        """Scaled per-coordinate ages at time t (events at t inclusive)."""
        scale = self.mesh * self.mesh
        out = np.empty(self.dimension)
        for j in range(self.dimension):
            tj, _ = self.coordinate_events(j)
            pos = np.searchsorted(tj, t, side="right") - 1
            last = tj[pos] if pos >= 0 else 0.0
            out[j] = (t - last) / scale
        return out

    def restrict(self, t):
        """New skeleton containing only events at times <= t, horizon t."""
        if not 0.0 < t <= self.horizon:
            raise ValueError("t must lie in (0, horizon]")
        keep = self.times <= t
        return Skeleton(
            mesh=self.mesh,
            horizon=float(t),
            dimension=self.dimension,
            mode=self.mode,
            times=self.times[keep],
            coords=self.coords[keep],
            signs=self.signs[keep],
            scaled_gaps=self.scaled_gaps[keep],
            origin=self.origin,
        )

    # -- persistence ------------------------------------------------------

    def save_csv(self, path):
        """Event list as CSV (coordinate, n, time, sign); floats via repr."""
        counters = np.zeros(self.dimension, dtype=np.int64)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                "# hitskel-skeleton mesh=%s horizon=%s dimension=%d mode=%s origin=%s\n"
                % (
                    repr(self.mesh),
                    repr(self.horizon),
                    self.dimension,
                    self.mode,
                    ",".join(repr(float(v)) for v in self.origin),
                )
            )
            fh.write("coordinate,n,time,sign\n")
            for i in range(self.n_events):
                j = int(self.coords[i])
                counters[j] += 1
                fh.write(
                    "%d,%d,%s,%d\n"
                    % (j, counters[j], repr(float(self.times[i])), int(self.signs[i]))
                )

    @classmethod
    def load_csv(cls, path):
        """Inverse of :meth:`save_csv`; scaled gaps are recomputed."""
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("# hitskel-skeleton "):
                raise ConfigError(f"{path}: not a skeleton CSV")
            meta = dict(kv.split("=", 1) for kv in header.split()[2:])
            fh.readline()  # column names
            rows = [line.strip().split(",") for line in fh if line.strip()]
        mesh = float(meta["mesh"])
        dimension = int(meta["dimension"])
        coords = np.array([int(r[0]) for r in rows], dtype=np.int64)
        times = np.array([float(r[2]) for r in rows])
        signs = np.array([int(r[3]) for r in rows], dtype=np.int64)
        origin = np.array([float(v) for v in meta["origin"].split(",")])
        return cls(
            mesh=mesh,
            horizon=float(meta["horizon"]),
            dimension=dimension,
            mode=meta["mode"],
            times=times,
            coords=coords,
            signs=signs,
            scaled_gaps=_recompute_gaps(times, coords, dimension, mesh),
            origin=origin,
        )

    def save_npz(self, path):
        np.savez(
            path,
            mesh=self.mesh,
            horizon=self.horizon,
            dimension=self.dimension,
            mode=self.mode,
            times=self.times,
            coords=self.coords,
            signs=self.signs,
            scaled_gaps=self.scaled_gaps,
            origin=self.origin,
        )

    @classmethod
    def load_npz(cls, path):
        with np.load(path, allow_pickle=False) as z:
            return cls(
                mesh=float(z["mesh"]),
                horizon=float(z["horizon"]),
                dimension=int(z["dimension"]),
                mode=str(z["mode"]),
                times=z["times"],
                coords=z["coords"],
                signs=z["signs"],
                scaled_gaps=z["scaled_gaps"],
                origin=z["origin"],
            )


def _recompute_gaps(times, coords, dimension, mesh):
    gaps = np.empty(times.size)
    scale = mesh * mesh
    for j in range(dimension):
        idx = np.flatnonzero(coords == j)
        tj = times[idx]
        gaps[idx] = np.diff(np.concatenate(([0.0], tj))) / scale
    return gaps


def _merge(times_list, signs_list, gaps_list):
    """Sorted union of per-coordinate events; ties break to lower coordinate."""
    times = np.concatenate(times_list)
    signs = np.concatenate(signs_list).astype(np.int64)
    gaps = np.concatenate(gaps_list)
    coords = np.concatenate(
        [np.full(t.size, j, dtype=np.int64) for j, t in enumerate(times_list)]
    )
    order = np.lexsort((coords, times))
    return times[order], coords[order], signs[order], gaps[order]


def generate_intrinsic(config, rng, law=None):
    """Simulate a skeleton with the exact hitting-time law.

    Per coordinate, raw exit-time draws accumulate until their sum exceeds
    ``horizon / mesh**2``; event times are ``mesh**2`` times the partial
    sums, and signs are independent fair coin flips drawn afterwards.  Draw
    order (coordinate 0 waits, coordinate 0 signs, coordinate 1 waits, ...)
    is part of the reproducibility contract.
    """
    if config.mode != INTRINSIC:
        raise ModeMismatchError(
            f"generate_intrinsic requires mode={INTRINSIC!r}, got {config.mode!r}"
        )
    law = law if law is not None else ExitLaw()
    scale = config.mesh * config.mesh
    limit = config.horizon / scale
    expected = limit + 6.0 * np.sqrt(limit * 2.0 / 3.0) + 16.0
    times_list, signs_list, gaps_list = [], [], []
    for _ in range(config.dimension):
        raws = law.sample(int(expected), rng)
        total = np.cumsum(raws)
        while total[-1] <= limit:
            extra = law.sample(max(64, int(0.2 * expected)), rng)
            raws = np.concatenate([raws, extra])
            total = np.cumsum(raws)
        n = int(np.searchsorted(total, limit, side="right"))
        raws = raws[:n]
        signs = rng.integers(0, 2, size=n, dtype=np.int64) * 2 - 1
        times_list.append(scale * np.cumsum(raws))
        signs_list.append(signs)
        gaps_list.append(raws)
    times, coords, signs, gaps = _merge(times_list, signs_list, gaps_list)
    return Skeleton(
        mesh=config.mesh,
        horizon=config.horizon,
        dimension=config.dimension,
        mode=INTRINSIC,
        times=times,
        coords=coords,
        signs=signs,
        scaled_gaps=gaps,
    )


def extract_from_path(grid_times, values, mesh):
    """Read the +-mesh crossing events off a sampled path.

    ``grid_times`` must be increasing with maximum step at most
    ``mesh**2 / 100``; coarser grids raise :class:`GridTooCoarseError`
    because detection bias would dominate.  Crossing times are linearly
    interpolated inside the detecting step; levels rebase by exactly
    ``+-mesh`` so jump magnitudes stay bit-exact.
    """
    mesh = float(mesh)
    if not np.isfinite(mesh) or mesh <= 0.0:
        raise ConfigError("mesh must be a positive finite number")
    grid_times = np.ascontiguousarray(grid_times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if grid_times.ndim != 1 or values.shape[0] != grid_times.size:
        raise ConfigError("grid_times and values must share their first axis")
    if grid_times.size < 2:
        raise ConfigError("need at least two grid points")
    steps = np.diff(grid_times)
    if np.any(steps <= 0.0):
        raise ConfigError("grid_times must be strictly increasing")
    h = float(np.max(steps))
    # tiny relative slack so grids built as i*h do not trip on roundoff
    if h > mesh * mesh / 100.0 * (1.0 + 1e-9):
        raise GridTooCoarseError(
            f"grid step {h:.3g} exceeds mesh**2/100 = {mesh * mesh / 100.0:.3g}"
        )
    d = values.shape[1]
    times_list, signs_list, gaps_list = [], [], []
    scale = mesh * mesh
    for j in range(d):
        idx, frac, sg = kernels.extract_crossings(
            np.ascontiguousarray(values[:, j]), mesh
        )
        tev = grid_times[idx - 1] + frac * (grid_times[idx] - grid_times[idx - 1])
        times_list.append(tev)
        signs_list.append(sg)
        gaps_list.append(np.diff(np.concatenate(([grid_times[0]], tev))) / scale)
    times, coords, signs, gaps = _merge(times_list, signs_list, gaps_list)
    return Skeleton(
        mesh=float(mesh),
        horizon=float(grid_times[-1]),
        dimension=d,
        mode=PATH_DRIVEN,
        times=times,
        coords=coords,
        signs=signs,
        scaled_gaps=gaps,
        origin=values[0].copy(),
    )


def coupling_gap(skeleton, grid_times, values, block=1 << 20):
    """sup over the reference grid of |skeleton - path|, all coordinates.

    Evaluates the skeleton as a cadlag step function on ``grid_times`` and
    returns the largest absolute deviation from ``values``; blocks keep the
    memory flat for long reference grids.
    """
    grid_times = np.asarray(grid_times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    levels = skeleton.values()
    worst = 0.0
    for j in range(skeleton.dimension):
        tj, _ = skeleton.coordinate_events(j)
        idxj = skeleton._coord_slices[j]
        lvl = levels[idxj, j] if idxj.size else np.empty(0)
        for start in range(0, grid_times.size, block):
            tt = grid_times[start : start + block]
            pos = np.searchsorted(tj, tt, side="right") - 1
            a = np.where(pos >= 0, lvl[np.maximum(pos, 0)], skeleton.origin[j])
            gap = float(np.max(np.abs(a - values[start : start + block, j])))
            if gap > worst:
                worst = gap
    return worst
