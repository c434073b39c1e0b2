"""Asymptotic estimators over refining mesh schedules.

The underlying theory speaks in weak limits that no finite computation can
certify, so this module deliberately recasts them as strong-norm error decay
on closed-form examples: squared L2(dt x dP) distance between the extended
discrete derivative and the known integrand, sup-norm drift errors, energy
and p-variation statistics, and pointwise hitting-time estimators around a
fixed time.  Reports show trends; they are diagnostics, not verdicts.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import HorizonExceededError, ModeMismatchError, RejectionStarvationError
from .exit_law import TAIL_TIME, ExitLaw
from .operators import decompose, derivative_at_events, generator_field
from .skeleton import PATH_DRIVEN, Skeleton, extract_from_path, mesh_schedule
from .streams import parallel_map, substream
from .structures import PathFunctional, StepPath, StepProcess, build_functional_structure


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-level metrics over a mesh schedule.

    ``columns`` maps metric names to per-level arrays.  Runtimes are carried
    on the object but the serializers exclude them by default so that
    repeated runs with one seed produce byte-identical artifacts; pass
    ``include_runtimes=True`` to keep them (e.g. for a timing sidecar).
    """

    levels: np.ndarray
    meshes: np.ndarray
    columns: dict
    budgets: np.ndarray
    runtimes: np.ndarray

    def __post_init__(self):
        n = self.levels.size
        arrays = [self.meshes, self.budgets, self.runtimes] + list(self.columns.values())
        if any(a.shape != (n,) for a in arrays):
            raise ValueError("all report columns must have one entry per level")

    def column_names(self):
        return sorted(self.columns)

    def to_json(self, path, include_runtimes=False):
        payload = {
            "levels": [int(k) for k in self.levels],
            "meshes": [repr(float(m)) for m in self.meshes],
            "budgets": [int(b) for b in self.budgets],
            "columns": {
                name: [repr(float(v)) for v in arr]
                for name, arr in sorted(self.columns.items())
            },
        }
        if include_runtimes:
            payload["runtimes"] = [float(r) for r in self.runtimes]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        n = len(payload["levels"])
        return cls(
            levels=np.array(payload["levels"], dtype=np.int64),
            meshes=np.array([float(m) for m in payload["meshes"]]),
            columns={
                name: np.array([float(v) for v in arr])
                for name, arr in payload["columns"].items()
            },
            budgets=np.array(payload["budgets"], dtype=np.int64),
            runtimes=np.array(payload.get("runtimes", [0.0] * n)),
        )

    def to_csv(self, path, include_runtimes=False):
        names = self.column_names()
        with open(path, "w", encoding="utf-8") as fh:
            head = ["level", "mesh", "budget"] + names
            if include_runtimes:
                head.append("runtime_s")
            fh.write(",".join(head) + "\n")
            for i in range(self.levels.size):
                row = [
                    str(int(self.levels[i])),
                    repr(float(self.meshes[i])),
                    str(int(self.budgets[i])),
                ] + [repr(float(self.columns[nm][i])) for nm in names]
                if include_runtimes:
                    row.append(repr(float(self.runtimes[i])))
                fh.write(",".join(row) + "\n")


def energy(x: StepProcess, t=None):
    """Sum of squared jumps of one realization up to time t.

    The finite-energy condition of the theory bounds the *expectation* of
    this statistic uniformly in the level; callers average over replications
    to estimate it.
    """
    t = x.skeleton.horizon if t is None else float(t)
    keep = x.times <= t
    return float(np.sum(x.increments[keep] ** 2))


def covariation(x: StepProcess, j, t=None):
    """[X, walk_j](t): sum of (jump of X)(mesh * sign) over coordinate-j events.

    Exact on the realization -- no Monte Carlo; identically zero for
    coordinates that never appear in the events (disjoint supports).
    """
    s = x.skeleton
    t = s.horizon if t is None else float(t)
    keep = (s.coords == j) & (s.times <= t)
    return float(np.sum(x.increments[keep] * (s.mesh * s.signs[keep])))


def p_variation(x: StepProcess, alpha, t=None):
    """|X(0)|^alpha plus the sum of |jump|^alpha over events up to t."""
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    t = x.skeleton.horizon if t is None else float(t)
    keep = x.times <= t
    return float(abs(x.initial) ** alpha + np.sum(np.abs(x.increments[keep]) ** alpha))


def pathwise_derivative_error(x: StepProcess, grid_times, reference_values, j=0):
    """integral_0^T |extended derivative - reference|^2 dt for one path.

    The derivative field of coordinate j is extended by holding the last
    event's value (zero before the first event) and compared against
    ``reference_values`` sampled on the skeleton's own uniform driving grid.
    Requires a path-extracted skeleton: the reference is a functional of the
    driving path, which an intrinsic skeleton does not have.
    """
    s = x.skeleton
    if s.mode != PATH_DRIVEN:
        raise ModeMismatchError("derivative error vs a path reference needs path_driven mode")
    grid_times = np.asarray(grid_times, dtype=np.float64)
    reference_values = np.asarray(reference_values, dtype=np.float64)
    if reference_values.ndim == 2:
        reference_values = reference_values[:, j]
    reference_values = np.ascontiguousarray(reference_values)
    fld = derivative_at_events(x)
    idx = np.flatnonzero(s.coords == j)
    tev = np.ascontiguousarray(s.times[idx])
    dev = np.ascontiguousarray(fld.derivative[idx])
    h = float(grid_times[1] - grid_times[0])
    return float(
        kernels.step_mismatch_integral(
            tev, dev, float(grid_times[0]), h, reference_values, float(s.horizon)
        )
    )


def reference_ones(grid_times, path_values):
    """Limit derivative of the coordinate functional: identically one."""
    return np.ones_like(np.asarray(path_values, dtype=np.float64))


def reference_twice_path(grid_times, path_values):
    """Limit derivative of level**2 - t: twice the driving path."""
    return 2.0 * np.asarray(path_values, dtype=np.float64)


#: Named closed-form limit derivatives, module-level so jobs pickle cleanly.
_REFERENCES = {
    "coordinate": reference_ones,
    "square_minus_time": reference_twice_path,
    "square": reference_twice_path,
}


def get_derivative_reference(name):
    try:
        return _REFERENCES[name]
    except KeyError:
        raise KeyError(
            f"no closed-form derivative reference for {name!r}; "
            f"known: {sorted(_REFERENCES)}"
        ) from None


def _derivative_error_level(args):
    (functional_name, functional_params, reference, mesh, horizon,
     replications, master_seed, coordinate, grid_factor) = args
    from .structures import get_functional

    functional = get_functional(functional_name, **functional_params)
    n = int(np.ceil(horizon * grid_factor / (mesh * mesh)))
    h = horizon / n
    total = 0.0
    for rep in range(replications):
        rng = substream(master_seed, rep)
        dw = rng.standard_normal(n) * np.sqrt(h)
        b = np.empty(n + 1)
        b[0] = 0.0
        np.cumsum(dw, out=b[1:])
        grid = np.arange(n + 1) * h
        s = extract_from_path(grid, b, mesh)
        x = build_functional_structure(functional, s)
        ref = reference(grid, b)
        total += pathwise_derivative_error(x, grid, ref, j=coordinate)
    return total / replications


def derivative_error(
    functional_name,
    reference,
    levels,
    horizon=1.0,
    replications=1000,
    master_seed=0,
    coordinate=0,
    grid_factor=100.0,
    workers=1,
    functional_params=None,
):
    """Decay profile of the squared derivative mismatch over a mesh schedule.

    Per level: extract skeletons from fresh driving paths (grid step
    ``mesh**2 / grid_factor``), build the named functional's structure, and
    average the pathwise squared-L2 mismatch between the extended derivative
    and ``reference(grid, path)``.  Replication r always uses substream
    ``(master_seed + level_index, r)``, so results do not depend on the
    worker count.
    """
    levels = np.asarray(levels, dtype=np.int64)
    meshes = mesh_schedule(levels)
    params = dict(functional_params or {})
    jobs = [
        (
            functional_name,
            params,
            reference,
            float(meshes[i]),
            float(horizon),
            int(replications),
            int(master_seed) + int(i),
            int(coordinate),
            float(grid_factor),
        )
        for i in range(levels.size)
    ]
    starts = np.empty(levels.size)
    outs = []
    t_all = _time.perf_counter()
    if workers > 1:
        outs = parallel_map(_derivative_error_level, jobs, workers=workers)
        runtimes = np.full(levels.size, (_time.perf_counter() - t_all) / levels.size)
    else:
        runtimes = np.empty(levels.size)
        for i, job in enumerate(jobs):
            t0 = _time.perf_counter()
            outs.append(_derivative_error_level(job))
            runtimes[i] = _time.perf_counter() - t0
    return ConvergenceReport(
        levels=levels,
        meshes=meshes,
        columns={"derivative_error": np.array(outs)},
        budgets=np.full(levels.size, int(replications), dtype=np.int64),
        runtimes=runtimes,
    )


def drift_reconstruction(x: StepProcess, field):
    """Level-k drift approximation: the compensator from the decomposition."""
    _, comp = decompose(x, field)
    return StepProcess(x.skeleton, 0.0, comp.increments, name=f"drift[{x.name or 'x'}]")


def stability_diagnostic(
    functional: PathFunctional,
    levels,
    horizon=1.0,
    replications=200,
    master_seed=0,
    dimension=1,
):
    """Trend report for the stability proxies of a functional's structures.

    Per level: the variance of the compensator endpoint N(T) across
    replications (tightness proxy) and the mean squared 2-variation of N
    over the skeleton partition (null-variation proxy).  Trends only -- a
    bounded variance column and a decreasing Q2 column are consistent with
    stability, never a proof.
    """
    from .skeleton import SkeletonConfig, generate_intrinsic

    levels = np.asarray(levels, dtype=np.int64)
    meshes = mesh_schedule(levels)
    var_col = np.empty(levels.size)
    q2_col = np.empty(levels.size)
    runtimes = np.empty(levels.size)
    for i, mesh in enumerate(meshes):
        t0 = _time.perf_counter()
        cfg = SkeletonConfig(mesh=float(mesh), horizon=horizon, dimension=dimension)
        ends = np.empty(replications)
        q2 = np.empty(replications)
        for rep in range(replications):
            rng = substream(master_seed + i, rep)
            s = generate_intrinsic(cfg, rng)
            x = build_functional_structure(functional, s)
            fld = generator_field(functional, s)
            drift = drift_reconstruction(x, fld)
            ends[rep] = drift.at(horizon)
            q2[rep] = p_variation(drift, 2.0, horizon)
        var_col[i] = float(np.var(ends, ddof=1))
        q2_col[i] = float(np.mean(q2))
        runtimes[i] = _time.perf_counter() - t0
    return ConvergenceReport(
        levels=levels,
        meshes=meshes,
        columns={"compensator_variance": var_col, "q2_variation": q2_col},
        budgets=np.full(levels.size, int(replications), dtype=np.int64),
        runtimes=runtimes,
    )


def _first_crossing(grid_times, col, i0, eps):
    ref = col[i0]
    block = np.abs(col[i0:] - ref) >= eps
    hits = np.flatnonzero(block)
    if hits.size == 0:
        raise HorizonExceededError(
            f"no +-{eps:g} crossing after t0={grid_times[i0]:.6g} before the path ends"
        )
    return i0 + int(hits[0])


def local_derivative(grid_times, path_values, functional: PathFunctional, t0, eps, j=0):
    """Jump quotient of a functional across one local hitting time.

    From ``t0``, waits until coordinate j first moves ``eps`` away from its
    value at ``t0`` (first grid index where it has; both the functional and
    the path are read at that grid time) and returns
    ``(X(t_hit) - X(t0)) / (B_j(t_hit) - B_j(t0))``.
    """
    grid_times = np.asarray(grid_times, dtype=np.float64)
    values = np.asarray(path_values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    i0 = int(np.searchsorted(grid_times, t0, side="right")) - 1
    ihit = _first_crossing(grid_times, values[:, j], i0, eps)
    path = StepPath.from_grid(grid_times, values)
    num = functional(float(grid_times[ihit]), path) - functional(
        float(grid_times[i0]), path
    )
    den = float(values[ihit, j] - values[i0, j])
    return num / den


def local_generator(
    grid_times,
    path_values,
    functional: PathFunctional,
    t0,
    eps,
    j=0,
    mc_budget=2000,
    min_accept=30,
    time_band=None,
    rng=None,
):
    """Conditional mean of (jump of X) / (waiting time) at a local hitting time.

    Observes the exit time of coordinate j from the ``+-eps`` band after
    ``t0`` on the given path, then resamples Brownian continuations from
    ``t0``, keeping those whose own exit time matches the observed one
    within ``time_band`` (default ``eps**2 / 2``).  Each accepted
    continuation is grafted onto the observed past and the ratio
    (X(t0 + wait) - X(t0)) / wait is averaged.
    """
    grid_times = np.asarray(grid_times, dtype=np.float64)
    values = np.asarray(path_values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    d = values.shape[1]
    band = (eps * eps / 2.0) if time_band is None else float(time_band)
    i0 = int(np.searchsorted(grid_times, t0, side="right")) - 1
    ihit = _first_crossing(grid_times, values[:, j], i0, eps)
    t_obs = float(grid_times[ihit] - grid_times[i0])
    h = float(grid_times[1] - grid_times[0])
    n_max = int(np.ceil((TAIL_TIME * eps * eps) / h))
    past_t = grid_times[: i0 + 1]
    past_v = values[: i0 + 1]
    base = values[i0]
    f_now = functional(float(grid_times[i0]), StepPath.from_grid(grid_times, values))
    chunk = max(16, int(np.ceil(4.0 * eps * eps / h)))
    acc = []
    for _ in range(int(mc_budget)):
        # grow the continuation until it crosses (tail beyond 60 eps^2 is
        # below 1e-32 and counts as a failed proposal)
        cont = np.empty((0, d))
        last = base
        k = -1
        while cont.shape[0] < n_max:
            take = min(chunk, n_max - cont.shape[0])
            dw = rng.standard_normal((take, d)) * np.sqrt(h)
            seg = last + np.cumsum(dw, axis=0)
            hits = np.flatnonzero(np.abs(seg[:, j] - base[j]) >= eps)
            if hits.size:
                k = cont.shape[0] + int(hits[0])
                cont = np.vstack((cont, seg[: int(hits[0]) + 1]))
                break
            cont = np.vstack((cont, seg))
            last = seg[-1]
        if k < 0:
            continue
        t_sim = (k + 1) * h
        if abs(t_sim - t_obs) > band:
            continue
        glued_t = np.concatenate((past_t, past_t[-1] + h * np.arange(1, k + 2)))
        glued_v = np.vstack((past_v, cont))
        f_hit = functional(float(glued_t[-1]), StepPath.from_grid(glued_t, glued_v))
        acc.append((f_hit - f_now) / t_sim)
    if len(acc) < min_accept:
        raise RejectionStarvationError(
            f"local generator: {len(acc)} acceptances < {min_accept} "
            f"within budget {mc_budget}"
        )
    return float(np.mean(acc))
