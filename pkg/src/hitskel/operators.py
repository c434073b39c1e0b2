"""Discrete variational operators on step processes.

Given a step process X on a skeleton, this module computes

* the jump-quotient derivative ``D_n = (jump of X) / (jump of the walk)`` at
  every merged event, arranged so the telescoping product reconstructs the
  jump of X to the bit where floating point allows it;
* the weak generator ``U_n = E[jump of X | time of the event, mark unknown]
  / mesh**2``.  For the renewal construction the conditional law of the
  triggering coordinate given the exact waiting time has the closed form

      P(coordinate = j | wait) = hazard(age_j + wait) / sum_l hazard(age_l + wait)

  (each coordinate's residual density carries its own hazard once the
  common survival factors cancel), and the sign is an independent fair
  flip, so the default estimator enumerates the 2d mark values exactly with
  zero standard error.  A kernel-weighted Monte Carlo estimator over the
  one-step conditional law is kept as an option for cross-checking;
* the conditional generator -- the plain Monte Carlo mean of the *next*
  normalized increment under the one-step conditional law;
* the special-semimartingale split X = X(0) + M + N with compensator
  increments ``mesh**2 * U_n``;
* extensions of D and U from event times to all times (hold-last-value for
  D; hold-last-value times the running hazard for U).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MCBudgetError
from .exit_law import ExitLaw
from .renewal import History, next_event_batch
from .skeleton import Skeleton
from .structures import PathFunctional, StepPath, StepProcess


def _exact_quotients(increments, denominators):
    """Quotients q with fl(q * denominator) == increment where achievable.

    Correctly-rounded division puts ``q * denom`` within one ulp of the
    increment; when that misses, one of the two neighbouring floats usually
    multiplies back exactly and is used instead.  A small residue of targets
    (about 1% of events for a generic mesh) is not in the image of
    multiplication-by-denominator at all; those keep the rounded quotient
    and reconstruct one ulp off, which is the documented "machine
    precision" allowance of the telescoping identity.
    """
    q = increments / denominators
    bad = np.flatnonzero(q * denominators != increments)
    if bad.size:
        qa = np.nextafter(q[bad], np.inf)
        qb = np.nextafter(q[bad], -np.inf)
        hit_a = qa * denominators[bad] == increments[bad]
        hit_b = qb * denominators[bad] == increments[bad]
        q[bad] = np.where(hit_a, qa, np.where(hit_b, qb, q[bad]))
    return q


@dataclass(frozen=True, eq=False)
class OperatorField:
    """Per-event derivative and generator samples for one step process.

    ``derivative[n]`` belongs to the event's own coordinate (the derivative
    along other coordinates is zero at that instant).  Generator entries are
    NaN until filled by a generator pass; exact enumeration reports zero
    standard error.
    """

    skeleton: Skeleton
    derivative: np.ndarray
    generator: np.ndarray
    generator_stderr: np.ndarray

    def __post_init__(self):
        n = self.skeleton.n_events
        for arr in (self.derivative, self.generator, self.generator_stderr):
            if arr.shape != (n,):
                raise ValueError("field arrays must have one entry per event")

    def to_csv(self, path):
        """Per-event export: n, time, coordinate, sign, D, U, U_stderr."""
        s = self.skeleton
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("n,time,coordinate,sign,D,U,U_stderr\n")
            for n in range(s.n_events):
                fh.write(
                    "%d,%s,%d,%d,%s,%s,%s\n"
                    % (
                        n,
                        repr(float(s.times[n])),
                        int(s.coords[n]),
                        int(s.signs[n]),
                        repr(float(self.derivative[n])),
                        repr(float(self.generator[n])),
                        repr(float(self.generator_stderr[n])),
                    )
                )


def derivative_at_events(x: StepProcess) -> OperatorField:
    """Jump quotients D_n = (increment of X) / (mesh * sign) per event."""
    s = x.skeleton
    denom = s.mesh * s.signs.astype(np.float64)
    d = _exact_quotients(x.increments.copy(), denom)
    nan = np.full(s.n_events, np.nan)
    return OperatorField(s, d, nan, nan.copy())


def history_path(history: History, mesh, origin=None) -> StepPath:
    """The step path a history describes (levels are origin + mesh walk)."""
    d = history.dimension
    origin = np.zeros(d) if origin is None else np.asarray(origin, dtype=np.float64)
    steps = np.zeros((history.n_events, d))
    if history.n_events:
        steps[np.arange(history.n_events), history.coords] = mesh * history.signs
    levels = origin + np.cumsum(steps, axis=0)
    end = history.total_time if history.n_events else 0.0
    return StepPath(history.times, levels, origin, end)


def nabla(functional: PathFunctional, history: History, mesh, j, origin=None):
    """Pathwise finite-difference derivative along coordinate j.

    Quotient of (functional at the last event) minus (functional at the
    history with the last event removed) by the last jump, masked by the
    indicator that the last event belongs to coordinate j.  Agrees with
    :func:`derivative_at_events` bit for bit when both consume the same
    pointwise evaluations.
    """
    if history.n_events < 1:
        raise ValueError("nabla needs at least one event")
    if not 0 <= j < history.dimension:
        raise ValueError(f"coordinate {j} out of range for dimension {history.dimension}")
    if int(history.coords[-1]) != j:
        return 0.0
    full = history_path(history, mesh, origin)
    prev_t = float(history.times[-2]) if history.n_events > 1 else 0.0
    f_now = functional(history.total_time, full)
    f_prev = functional(prev_t, full.restrict(prev_t))
    denom = np.array([mesh * float(history.signs[-1])])
    return float(_exact_quotients(np.array([f_now - f_prev]), denom)[0])


def _mark_weights(ages_scaled, wait_scaled, law: ExitLaw):
    """P(coordinate | waiting time) for the renewal next-event law."""
    haz = np.array([law.hazard(a + wait_scaled) for a in ages_scaled])
    total = haz.sum()
    if total <= 0.0:
        # waiting time so small every hazard underflows; marks are symmetric
        return np.full(ages_scaled.size, 1.0 / ages_scaled.size)
    return haz / total


def weak_generator_at_event(
    functional: PathFunctional,
    history: History,
    mesh,
    law=None,
    method="exact",
    mc_budget=2000,
    bandwidth=None,
    stderr_tol=None,
    rng=None,
    origin=None,
):
    """E[normalized jump of X at the last event | its time, mark unknown].

    The history must end with the event being examined; conditioning keeps
    its waiting time and integrates out the mark.  ``method='exact'``
    enumerates the 2d mark values with the closed-form coordinate weights
    (standard error 0); ``method='kernel'`` reweights draws of the one-step
    conditional law by a Gaussian kernel in the waiting time (bandwidth
    default ``0.1 * mesh**2``) and carries a real standard error.
    """
    if history.n_events < 1:
        raise ValueError("generator needs at least one event")
    law = law if law is not None else ExitLaw()
    scale = mesh * mesh
    prefix = History(
        history.dimension,
        history.deltas[:-1],
        history.coords[:-1],
        history.signs[:-1],
    )
    wait = float(history.deltas[-1])
    t_prev = prefix.total_time
    base_path = history_path(prefix, mesh, origin)
    f_prev = functional(t_prev, base_path)

    def jump_value(delta, coord, sign):
        ext = prefix.append(delta, _mark(coord, sign))
        return functional(t_prev + delta, history_path(ext, mesh, origin)) - f_prev

    if method == "exact":
        ages = prefix.elapsed() / scale
        weights = _mark_weights(ages, wait / scale, law)
        acc = 0.0
        for j in range(history.dimension):
            if weights[j] == 0.0:
                continue
            acc += weights[j] * 0.5 * (jump_value(wait, j, 1) + jump_value(wait, j, -1))
        return acc / scale, 0.0
    if method != "kernel":
        raise ValueError(f"unknown method {method!r}")
    bw = 0.1 * scale if bandwidth is None else float(bandwidth)
    deltas, coords, signs = next_event_batch(prefix, mesh, mc_budget, law, rng)
    w = np.exp(-0.5 * ((deltas - wait) / bw) ** 2)
    wsum = w.sum()
    if wsum <= 0.0 or (w > 0).sum() < 8:
        raise MCBudgetError(
            f"kernel generator: too few draws near wait={wait:.3g} "
            f"(budget {mc_budget})"
        )
    jumps = np.array(
        [jump_value(deltas[i], int(coords[i]), int(signs[i])) for i in range(len(w))]
    )
    u = float(np.sum(w * jumps) / wsum) / scale
    var = float(np.sum(w**2 * (jumps / scale - u) ** 2)) / wsum**2
    stderr = np.sqrt(var)
    if stderr_tol is not None and stderr > stderr_tol:
        raise MCBudgetError(
            f"kernel generator stderr {stderr:.3g} exceeds tolerance {stderr_tol:.3g}"
        )
    return u, stderr


def conditional_generator(
    functional: PathFunctional,
    history: History,
    mesh,
    law=None,
    mc_budget=1000,
    stderr_tol=None,
    rng=None,
    origin=None,
):
    """Monte Carlo mean of the *next* normalized increment given the history.

    Draws (waiting time, mark) from the one-step conditional law, evaluates
    the functional on the extended path, and averages the increment divided
    by ``mesh**2``.  Returns (estimate, standard error).
    """
    law = law if law is not None else ExitLaw()
    scale = mesh * mesh
    t_now = history.total_time
    base_path = history_path(history, mesh, origin)
    f_now = functional(t_now, base_path)
    deltas, coords, signs = next_event_batch(history, mesh, mc_budget, law, rng)
    vals = np.empty(mc_budget)
    for i in range(int(mc_budget)):
        ext = history.append(deltas[i], _mark(int(coords[i]), int(signs[i])))
        vals[i] = functional(t_now + deltas[i], history_path(ext, mesh, origin)) - f_now
    vals /= scale
    u = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(mc_budget)) if mc_budget > 1 else np.inf
    if stderr_tol is not None and stderr > stderr_tol:
        raise MCBudgetError(
            f"conditional generator stderr {stderr:.3g} exceeds tolerance {stderr_tol:.3g}"
        )
    return u, stderr


def _mark(coord, sign):
    from .skeleton import Mark

    return Mark(coord, sign)


def generator_field(
    functional: PathFunctional,
    s: Skeleton,
    law=None,
    method="exact",
    mc_budget=2000,
    bandwidth=None,
    rng=None,
) -> OperatorField:
    """Derivative and weak-generator samples at every merged event.

    The exact method costs 2d functional evaluations per event; evaluations
    reuse preallocated path buffers, so one pass over n events does O(n * d)
    work for the built-in functionals.
    """
    law = law if law is not None else ExitLaw()
    scale = s.mesh * s.mesh
    n, d = s.n_events, s.dimension
    x = _evaluate_structure(functional, s)
    field = derivative_at_events(x)
    gen = np.empty(n)
    gen_se = np.zeros(n)
    if method == "exact":
        # shared buffers: row m of `levels` is the walk level after event m
        levels = s.values()
        times = s.times
        ages = s.ages_before_events()
        waits = np.diff(np.concatenate(([0.0], times))) / scale
        values = x.values
        for m in range(n):
            weights = _mark_weights(ages[m], waits[m], law)
            prev_level = levels[m - 1] if m else s.origin
            prev_value = values[m - 1] if m else x.initial
            t_m = times[m]
            acc = 0.0
            for j in range(d):
                if weights[j] == 0.0:
                    continue
                pair = 0.0
                for sign in (1.0, -1.0):
                    trial = prev_level.copy()
                    trial[j] += s.mesh * sign
                    pair += _eval_with_replaced_event(
                        functional, s, m, t_m, trial, prev_value
                    )
                acc += weights[j] * (0.5 * pair - prev_value)
            gen[m] = acc / scale
    else:
        for m in range(n):
            h = History.from_skeleton(s, m + 1)
            gen[m], gen_se[m] = weak_generator_at_event(
                functional,
                h,
                s.mesh,
                law=law,
                method=method,
                mc_budget=mc_budget,
                bandwidth=bandwidth,
                rng=rng,
                origin=s.origin,
            )
    return OperatorField(s, field.derivative, gen, gen_se)


def _evaluate_structure(functional, s):
    from .structures import build_functional_structure

    return build_functional_structure(functional, s)


def _eval_with_replaced_event(functional, s, m, t_m, trial_level, prev_value):
    """functional(t_m, path whose event m is replaced by a trial mark)."""
    times = s.times[: m + 1]
    levels = np.vstack((s.values()[:m], trial_level[None, :]))
    path = StepPath(times, levels, np.asarray(s.origin, float), float(t_m))
    return functional(t_m, path)


def decompose(x: StepProcess, field: OperatorField):
    """Special-semimartingale split X = X(0) + M + N on the skeleton.

    N accumulates the compensator increments ``mesh**2 * U_n``; M takes the
    rest, so the per-event identity ``jump M = jump X - mesh**2 U`` holds
    exactly by construction.
    """
    if field.skeleton is not x.skeleton:
        raise ValueError("step process and operator field use different skeletons")
    if np.any(np.isnan(field.generator)):
        raise ValueError("generator entries missing; run a generator pass first")
    scale = x.skeleton.mesh ** 2
    n_inc = scale * field.generator
    m_inc = x.increments - n_inc
    name = x.name or "x"
    mart = StepProcess(x.skeleton, 0.0, m_inc, name=f"martingale[{name}]")
    comp = StepProcess(x.skeleton, 0.0, n_inc, name=f"compensator[{name}]")
    return mart, comp


@dataclass(frozen=True, eq=False)
class ExtendedFields:
    """D and U extended from event times to all t in [0, horizon].

    D holds the last value of its coordinate's events (zero before the
    first); U holds the last value, multiplied by the hazard of the
    coordinate's current scaled age, which is the density of the angle
    bracket -- so the time integral of the extended generator reproduces
    the compensator.
    """

    field: OperatorField
    law: ExitLaw

    def _coord_view(self, j):
        s = self.field.skeleton
        idx = np.flatnonzero(s.coords == j)
        return s.times[idx], idx

    def derivative_at(self, t, j):
        tj, idx = self._coord_view(j)
        pos = int(np.searchsorted(tj, t, side="right")) - 1
        return 0.0 if pos < 0 else float(self.field.derivative[idx[pos]])

    def derivative_on_grid(self, grid_times, j):
        tj, idx = self._coord_view(j)
        pos = np.searchsorted(tj, np.asarray(grid_times, float), side="right") - 1
        vals = self.field.derivative[idx] if idx.size else np.empty(0)
        return np.where(pos >= 0, vals[np.maximum(pos, 0)], 0.0)

    def generator_at(self, t, j):
        s = self.field.skeleton
        tj, idx = self._coord_view(j)
        pos = int(np.searchsorted(tj, t, side="right")) - 1
        if pos < 0:
            return 0.0
        age = (t - tj[pos]) / s.mesh**2
        return float(self.field.generator[idx[pos]]) * self.law.hazard(age)

    def generator_integral(self, t, j):
        """integral_0^t of the extended generator, hazard factor exact.

        Piecewise closed form: on each inter-event interval the held U is
        constant and the hazard integrates to mesh**2 times the cumulative
        hazard of the scaled interval length.
        """
        s = self.field.skeleton
        tj, idx = self._coord_view(j)
        keep = tj <= t
        tj = tj[keep]
        held = self.field.generator[idx[keep]]
        if tj.size == 0:
            return 0.0
        scale = s.mesh**2
        ends = np.concatenate((tj[1:], [t]))
        gaps = (ends - tj) / scale
        lam = np.array([self.law.cumulative_hazard(g) for g in gaps])
        return float(scale * np.sum(held * lam))


def extend_fields(field: OperatorField, law=None) -> ExtendedFields:
    if np.any(np.isnan(field.generator)):
        raise ValueError("generator entries missing; run a generator pass first")
    return ExtendedFields(field, law if law is not None else ExitLaw())
