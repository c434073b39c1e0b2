"""Optimal stopping on the skeleton by backward recursion over event indices.

The value process solves ``V_i = max(reward_i, E[V_{i+1} | history])`` down
from the horizon index ``r = ceil(T / mesh**2)``.  Two estimators of the
conditional expectation are provided:

* ``tree_1d`` -- d = 1, Markovian rewards (the reward reads only the current
  level and time).  The mark integral is exact (fair sign, one coordinate);
  the waiting-time integral uses Gauss-Legendre quadrature against the exit
  law's density.  Rewards that do not depend on time collapse to a pure
  lattice recursion with no quadrature at all.
* ``regression_mc`` -- Longstaff-Schwartz style: simulate skeletons, regress
  realized continuation values on a polynomial basis in (level, time), stop
  when the immediate reward beats the fitted continuation.

``lattice_reference`` is an independent random-walk dynamic-programming
oracle on a fine time step for cross-checking values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .exit_law import ExitLaw, TAIL_TIME
from .skeleton import INTRINSIC, Skeleton, SkeletonConfig, generate_intrinsic
from .structures import PathFunctional, StepPath, StepProcess, build_functional_structure

#: Quadrature layout for integrals against the exit-time density: composite
#: Gauss-Legendre panels, denser where the density lives.
_PANELS = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, TAIL_TIME)
_PANEL_ORDER = 12


def horizon_index(mesh, horizon):
    """r = ceil(horizon / mesh**2), robust to float roundoff at integers."""
    return int(np.ceil(horizon / (mesh * mesh) - 1e-9))


def waiting_time_quadrature(law=None, panels=_PANELS, order=_PANEL_ORDER):
    """Nodes and normalized weights for E[f(tau)] under the exit law."""
    law = law if law is not None else ExitLaw()
    gl_x, gl_w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(panels[:-1], panels[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes.append(mid + half * gl_x)
        weights.append(half * gl_w * law.density(mid + half * gl_x))
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    return nodes, weights / weights.sum()


def _reward_on_state(reward: PathFunctional, t, level):
    """Markov read of the reward: a constant path pinned at ``level``."""
    path = StepPath(
        np.empty(0), np.empty((0, 1)), np.array([float(level)]), float(t)
    )
    return reward(float(t), path)


def _probe_markov_time(reward: PathFunctional, horizon):
    """(is_markov, is_time_dependent) by spot evaluation.

    A reward is treated as Markovian when it cannot distinguish two histories
    sharing an endpoint, probed on a handful of states; path-dependent
    rewards (running max, running integral) fail the probe.
    """
    t = 0.7 * horizon
    for level in (0.0, 0.3, -0.4):
        flat = StepPath(np.empty(0), np.empty((0, 1)), np.array([level]), t)
        detour_t = np.array([0.2 * t, 0.5 * t])
        detour_lv = np.array([[level + 0.8], [level]])
        detour = StepPath(detour_t, detour_lv, np.array([level - 0.8]), t)
        if not np.isclose(reward(t, flat), reward(t, detour), rtol=1e-10, atol=1e-12):
            return False, True
    time_dep = False
    for level in (0.0, 0.5):
        a = _reward_on_state(reward, 0.31 * horizon, level)
        b = _reward_on_state(reward, 0.77 * horizon, level)
        if not np.isclose(a, b, rtol=1e-10, atol=1e-12):
            time_dep = True
    return True, time_dep


@dataclass(frozen=True, eq=False)
class StoppingSolution:
    """Backward-recursion output plus one evaluated sample path.

    ``value_path`` carries the fitted value process along a freshly simulated
    skeleton; ``reward_path`` the reward at the same events, so the dominance
    ``value >= reward`` and the equality at stopped nodes can be checked
    directly.  ``stderr`` is zero for the deterministic tree method.
    """

    method: str
    mesh: float
    horizon: float
    n_steps: int
    value_at_zero: float
    stderr: float
    value_path: StepProcess
    reward_path: np.ndarray
    stop_decisions: np.ndarray
    diagnostics: tuple = ()

    def summary(self):
        return {
            "method": self.method,
            "mesh": repr(float(self.mesh)),
            "horizon": repr(float(self.horizon)),
            "n_steps": int(self.n_steps),
            "value_at_zero": repr(float(self.value_at_zero)),
            "stderr": repr(float(self.stderr)),
            "diagnostics": list(self.diagnostics),
        }


def solve_optimal_stopping(
    reward: PathFunctional,
    mesh,
    horizon,
    method="tree_1d",
    budget=20000,
    rng=None,
    law=None,
    dimension=1,
    time_grid_size=192,
    basis_degree=3,
):
    """Value of stopping ``reward`` before the horizon index r = ceil(T/eps^2).

    ``tree_1d`` is deterministic (stderr 0) and requires dimension 1 with a
    Markovian reward; ``regression_mc`` handles path-dependent rewards and
    returns a Monte Carlo standard error.  ``rng`` drives path simulation,
    including the sample path attached to the solution.
    """
    law = law if law is not None else ExitLaw()
    rng = rng if rng is not None else np.random.default_rng()
    if method == "tree_1d":
        if dimension != 1:
            raise ConfigError("tree_1d handles dimension 1 only")
        markov, time_dep = _probe_markov_time(reward, horizon)
        if not markov:
            raise ConfigError(
                "tree_1d needs a Markovian reward (probe detected path "
                "dependence); use method='regression_mc'"
            )
        return _solve_tree(reward, mesh, horizon, law, rng, time_dep, time_grid_size)
    if method == "regression_mc":
        return _solve_regression(
            reward, mesh, horizon, law, int(budget), rng, dimension, basis_degree
        )
    raise ConfigError(f"unknown stopping method {method!r}")


# -- deterministic 1d recursion -------------------------------------------


def _solve_tree(reward, mesh, horizon, law, rng, time_dep, time_grid_size):
    r = horizon_index(mesh, horizon)
    n_a = 2 * r + 3
    offsets = np.arange(n_a) - (r + 1)
    levels = mesh * offsets
    value_grid = None
    if not time_dep:
        gamma0 = np.array([_reward_on_state(reward, 0.0, a) for a in levels])
        v = gamma0.copy()
        for _ in range(r):
            cont = np.empty_like(v)
            cont[1:-1] = 0.5 * (v[2:] + v[:-2])
            cont[0] = v[0]
            cont[-1] = v[-1]
            v = np.maximum(gamma0, cont)
        value0 = float(v[r + 1])
    else:
        scale = mesh * mesh
        t_max = 1.6 * horizon + 10.0 * scale * np.sqrt(r) + scale * TAIL_TIME
        tgrid = np.linspace(0.0, t_max, int(time_grid_size))
        dt = tgrid[1] - tgrid[0]
        nodes, weights = waiting_time_quadrature(law)
        gamma = np.empty((tgrid.size, n_a))
        for ia, a in enumerate(levels):
            for it, t in enumerate(tgrid):
                gamma[it, ia] = _reward_on_state(reward, t, a)
        v = gamma.copy()
        # fractional row shifts per quadrature node; flat extrapolation past
        # the top of the grid (the grid is sized so that mass is negligible)
        rows = np.arange(tgrid.size)
        shift = nodes * scale / dt
        base = np.floor(shift).astype(np.int64)
        frac = shift - base
        lo_idx = [np.minimum(rows + b, tgrid.size - 1) for b in base]
        hi_idx = [np.minimum(ix + 1, tgrid.size - 1) for ix in lo_idx]
        for _ in range(r):
            vbar = np.zeros_like(v)
            for q in range(nodes.size):
                vbar += weights[q] * (
                    (1.0 - frac[q]) * v[lo_idx[q]] + frac[q] * v[hi_idx[q]]
                )
            cont = np.empty_like(v)
            cont[:, 1:-1] = 0.5 * (vbar[:, 2:] + vbar[:, :-2])
            cont[:, 0] = vbar[:, 0]
            cont[:, -1] = vbar[:, -1]
            v = np.maximum(gamma, cont)
        value0 = float(v[0, r + 1])
        value_grid = (tgrid, v)

    # evaluate the value surface along one sample skeleton for inspection
    cfg = SkeletonConfig(mesh=float(mesh), horizon=float(horizon), dimension=1)
    s = generate_intrinsic(cfg, rng, law)
    gamma_path = _path_rewards(reward, s)
    vals = np.empty(s.n_events)
    walk = s.walk[:, 0]
    for n in range(s.n_events):
        col = min(max(int(walk[n]) + r + 1, 0), n_a - 1)
        if value_grid is None:
            vals[n] = v[col]
        else:
            tgrid, surf = value_grid
            vals[n] = float(np.interp(s.times[n], tgrid, surf[:, col]))
        # linear-in-t interpolation can dip a hair below a curved reward;
        # the value dominates the reward by definition, so clamp
        vals[n] = max(vals[n], gamma_path[n])
    value_path = StepProcess.from_values(s, value0, vals, name="stopping_value")
    decisions = gamma_path >= vals - 1e-12
    return StoppingSolution(
        method="tree_1d",
        mesh=float(mesh),
        horizon=float(horizon),
        n_steps=r,
        value_at_zero=value0,
        stderr=0.0,
        value_path=value_path,
        reward_path=gamma_path,
        stop_decisions=decisions,
    )


def _path_rewards(reward, s: Skeleton):
    x = build_functional_structure(reward, s)
    return x.initial + np.cumsum(x.increments)


# -- regression Monte Carlo -----------------------------------------------


def _poly_basis(a, t, degree):
    cols = []
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            cols.append((a**i) * (t**j))
    return np.column_stack(cols)


def _simulated_fan(mesh, horizon, budget, law, rng):
    """(times, signs, raw gaps) for ``budget`` paths of r events each."""
    r = horizon_index(mesh, horizon)
    raw = law.sample(budget * r, rng).reshape(budget, r)
    times = (mesh * mesh) * np.cumsum(raw, axis=1)
    signs = rng.integers(0, 2, size=(budget, r), dtype=np.int64) * 2 - 1
    return times, signs, raw


def _fan_skeleton(mesh, times, signs, raw, p):
    return Skeleton(
        mesh=float(mesh),
        horizon=float(times[p, -1]),
        dimension=1,
        mode=INTRINSIC,
        times=times[p],
        coords=np.zeros(times.shape[1], dtype=np.int64),
        signs=signs[p],
        scaled_gaps=raw[p],
    )


def _solve_regression(reward, mesh, horizon, law, budget, rng, dimension, degree):
    if dimension != 1:
        raise ConfigError("regression_mc stopping currently supports dimension 1")
    if budget < 64:
        raise ConfigError("regression_mc needs a budget of at least 64 paths")
    r = horizon_index(mesh, horizon)
    times, signs, raw = _simulated_fan(mesh, horizon, budget, law, rng)
    levels = mesh * np.cumsum(signs, axis=1)
    gamma = np.empty((budget, r + 1))
    gamma[:, 0] = _reward_on_state(reward, 0.0, 0.0)
    for p in range(budget):
        x = build_functional_structure(reward, _fan_skeleton(mesh, times, signs, raw, p))
        gamma[p, 1:] = x.initial + np.cumsum(x.increments)

    diagnostics = []
    coefs = [None] * r  # continuation-fit coefficients per event index
    cash = gamma[:, r].copy()
    for n in range(r - 1, 0, -1):
        basis = _poly_basis(levels[:, n - 1], times[:, n - 1], degree)
        coef, _, rank, _ = np.linalg.lstsq(basis, cash, rcond=None)
        if rank < basis.shape[1]:
            diagnostics.append(f"layer {n}: regression rank {rank} < {basis.shape[1]}")
        coefs[n] = coef
        cont = basis @ coef
        exercise = gamma[:, n] >= cont
        cash = np.where(exercise, gamma[:, n], cash)
    value0 = float(max(gamma[0, 0], cash.mean()))
    stderr = float(cash.std(ddof=1) / np.sqrt(budget))

    # fitted value process along the first simulated path
    s0 = _fan_skeleton(mesh, times, signs, raw, 0)
    vals = np.empty(r)
    for n in range(1, r + 1):
        if n == r or coefs[n] is None:
            fitted = gamma[0, n]
        else:
            row = _poly_basis(levels[0:1, n - 1], times[0:1, n - 1], degree)
            fitted = float((row @ coefs[n])[0])
        vals[n - 1] = max(gamma[0, n], fitted)
    value_path = StepProcess.from_values(s0, value0, vals, name="stopping_value")
    return StoppingSolution(
        method="regression_mc",
        mesh=float(mesh),
        horizon=float(horizon),
        n_steps=r,
        value_at_zero=value0,
        stderr=stderr,
        value_path=value_path,
        reward_path=gamma[0, 1:],
        stop_decisions=gamma[0, 1:] >= vals - 1e-12,
        diagnostics=tuple(diagnostics),
    )


# -- independent oracle ----------------------------------------------------


def lattice_reference(reward, horizon, step=1e-4, state_cap=4.0):
    """Random-walk dynamic-programming value for a Markovian reward.

    A Bernoulli walk with spatial step sqrt(step): an independent check on
    stopping values that shares no skeleton machinery.  ``state_cap`` bounds
    the level (truncation; adequate for rewards that die out in the tails).
    """
    markov, time_dep = _probe_markov_time(reward, horizon)
    if not markov:
        raise ConfigError("lattice_reference needs a Markovian reward")
    n = int(round(horizon / step))
    dx = np.sqrt(step)
    m = int(np.ceil(state_cap / dx))
    levels = dx * (np.arange(2 * m + 1) - m)
    gamma_fixed = None
    if not time_dep:
        gamma_fixed = np.array([_reward_on_state(reward, 0.0, a) for a in levels])
    v = (
        gamma_fixed.copy()
        if gamma_fixed is not None
        else np.array([_reward_on_state(reward, horizon, a) for a in levels])
    )
    for i in range(n - 1, -1, -1):
        cont = np.empty_like(v)
        cont[1:-1] = 0.5 * (v[2:] + v[:-2])
        cont[0] = v[1]
        cont[-1] = v[-2]
        if gamma_fixed is not None:
            gamma = gamma_fixed
        else:
            gamma = np.array([_reward_on_state(reward, i * step, a) for a in levels])
        v = np.maximum(gamma, cont)
    return float(v[m])
