"""Backward equations driven by the skeleton: Y_n = E[Y_{n+1}|history] + eps^2 g.

The pair (Y, Z) solves, event index by event index down from the horizon
index ``r = ceil(T / mesh**2)``,

    Y_r = terminal(path),
    Z_n = E[ (Y_{n+1} - Y_n) * jump / mesh**2 | history_n ],
    Y_n = E[ Y_{n+1} | history_n ] + mesh**2 * g(t_n, Y_n, Z_n),

with the implicit Y-step solved by fixed-point iteration.  Conditional
expectations are least-squares regressions on a polynomial basis in
(level, time) across a fan of simulated skeletons; layer 0 has a degenerate
state, so plain averages take over there.

``energy_check`` compares the accumulated martingale part of a solution
against terminal-preserving perturbations: the solution's squared time
integral should be minimal, and any added drift with vanishing integral
should cost exactly its own squared norm in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .errors import ConfigError, NonContractionError, TerminalMismatchError
from .exit_law import ExitLaw
from .stopping import _fan_skeleton, _poly_basis, _simulated_fan, horizon_index
from .structures import PathFunctional, StepProcess, build_functional_structure

_FP_MAX_ITER = 50
_FP_TOL = 1e-10


# -- drivers ----------------------------------------------------------------


def make_driver(name, **params):
    """Vectorized driver g(t, y, z) from a short registry.

    ``zero``and ``one`` are constants, ``linear_y`` is alpha * y, and
    ``expr`` evaluates a python expression in the names t, y, z (numpy
    available as np).  Returns ``(g, lipschitz_or_None)``.
    """
    if name == "zero":
        return (lambda t, y, z: np.zeros_like(np.asarray(y, dtype=np.float64))), 0.0
    if name == "one":
        return (lambda t, y, z: np.ones_like(np.asarray(y, dtype=np.float64))), 0.0
    if name == "linear_y":
        alpha = float(params.get("alpha", 0.5))
        return (lambda t, y, z: alpha * np.asarray(y, dtype=np.float64)), abs(alpha)
    if name == "expr":
        source = params.get("source")
        if not source:
            raise ConfigError("driver 'expr' needs source=<expression in t, y, z>")
        code = compile(source, "<driver>", "eval")
        ns = {"np": np, "abs": np.abs, "exp": np.exp, "sin": np.sin, "cos": np.cos,
              "sqrt": np.sqrt, "minimum": np.minimum, "maximum": np.maximum}

        def g(t, y, z):
            return np.asarray(
                eval(code, {"__builtins__": {}}, {**ns, "t": t, "y": y, "z": z}),
                dtype=np.float64,
            )

        return g, None
    raise ConfigError(f"unknown driver {name!r}; known: expr, linear_y, one, zero")


# -- solution type -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    """Fitted backward solution with out-of-sample residual evidence.

    ``value_coefs``/``z_coefs`` hold per-layer regression coefficients for
    the conditional mean of Y_{n+1} and for Z_n; layer 0 entries are the
    degenerate plain-average fits.  ``residuals`` are signed out-of-sample
    samples of (Y_{n+1}-Y_n)/mesh**2 + g, which should be centered at zero;
    ``residual_field`` is the matching magnitude field mesh**2 * |...| on
    the attached sample path.  Terminal values match the terminal functional
    samplewise by construction (see ``terminal_gap``).
    """

    mesh: float
    horizon: float
    n_steps: int
    y_at_zero: float
    stderr: float
    z_at_zero: float
    value_coefs: tuple
    z_coefs: tuple
    degree: int
    y_path: StepProcess
    z_path: np.ndarray
    terminal_gap: float
    residuals: np.ndarray
    residual_field: np.ndarray
    diagnostics: tuple = ()

    def residual_tstat(self):
        """t statistic of the pooled signed residuals against zero mean."""
        n = self.residuals.size
        if n < 2:
            return 0.0
        return float(
            self.residuals.mean() / (self.residuals.std(ddof=1) / np.sqrt(n))
        )

    def summary(self):
        return {
            "mesh": repr(float(self.mesh)),
            "horizon": repr(float(self.horizon)),
            "n_steps": int(self.n_steps),
            "y_at_zero": repr(float(self.y_at_zero)),
            "stderr": repr(float(self.stderr)),
            "z_at_zero": repr(float(self.z_at_zero)),
            "terminal_gap": repr(float(self.terminal_gap)),
            "residual_tstat": repr(float(self.residual_tstat())),
            "diagnostics": list(self.diagnostics),
        }


# -- solver -------------------------------------------------------------------


def _terminal_values(terminal, mesh, times, signs, raw):
    out = np.empty(times.shape[0])
    for p in range(times.shape[0]):
        x = build_functional_structure(
            terminal, _fan_skeleton(mesh, times, signs, raw, p)
        )
        out[p] = x.initial + float(np.sum(x.increments))
    return out


def _fixed_point(cond_mean, t, z, g, scale):
    """Solve y = cond_mean + scale * g(t, y, z) by damped-free iteration."""
    y = np.asarray(cond_mean, dtype=np.float64).copy()
    for _ in range(_FP_MAX_ITER):
        y_next = cond_mean + scale * g(t, y, z)
        gap = float(np.max(np.abs(y_next - y)))
        y = y_next
        if gap <= _FP_TOL * (1.0 + float(np.max(np.abs(y)))):
            return y
    raise NonContractionError(
        "implicit step failed to converge in "
        f"{_FP_MAX_ITER} iterations (last gap {gap:.3e}); "
        "mesh**2 * Lipschitz(driver) is too large"
    )


def solve_bsde(
    driver,
    terminal: PathFunctional,
    mesh,
    horizon,
    budget=20000,
    test_budget=4000,
    rng=None,
    law=None,
    degree=3,
    lipschitz=None,
    dimension=1,
):
    """Regression solver for the backward pair (Y, Z) on skeleton fans.

    ``driver`` is a vectorized g(t, y, z); pass ``lipschitz`` when known so
    the contraction condition mesh**2 * L < 1 can be enforced up front.
    ``budget`` training paths fit the per-layer conditional expectations;
    ``test_budget`` fresh paths produce honest residual samples.
    """
    if dimension != 1:
        raise ConfigError("solve_bsde currently supports dimension 1")
    if budget < 256:
        raise ConfigError("solve_bsde needs a budget of at least 256 paths")
    law = law if law is not None else ExitLaw()
    rng = rng if rng is not None else np.random.default_rng()
    mesh = float(mesh)
    scale = mesh * mesh
    if lipschitz is not None and scale * float(lipschitz) >= 1.0:
        raise NonContractionError(
            f"mesh**2 * Lipschitz = {scale * float(lipschitz):.3g} >= 1"
        )
    r = horizon_index(mesh, horizon)

    times, signs, raw = _simulated_fan(mesh, horizon, budget, law, rng)
    levels = mesh * np.cumsum(signs, axis=1)
    y = _terminal_values(terminal, mesh, times, signs, raw)
    terminal_vals = y.copy()

    diagnostics = []
    value_coefs = [None] * r
    z_coefs = [None] * r
    for n in range(r - 1, -1, -1):
        if n == 0:
            cond = np.full(budget, y.mean())
            # centered regressand: the jump-quotient (Y_{n+1} - Y_n) * sign /
            # mesh with the known part of Y_n removed; unbiased because the
            # fitted conditional mean cannot see the next sign
            u = (y - cond) * signs[:, n] / mesh
            value_coefs[0] = np.array([y.mean()])
            z_coefs[0] = np.array([u.mean()])
            z_fit = np.full(budget, u.mean())
            t_now = np.zeros(budget)
        else:
            basis = _poly_basis(levels[:, n - 1], times[:, n - 1], degree)
            c_val, _, rank_v, _ = np.linalg.lstsq(basis, y, rcond=None)
            cond = basis @ c_val
            u = (y - cond) * signs[:, n] / mesh
            c_z, _, rank_z, _ = np.linalg.lstsq(basis, u, rcond=None)
            if min(rank_v, rank_z) < basis.shape[1] and n > 4:
                diagnostics.append(
                    f"layer {n}: rank {min(rank_v, rank_z)} < {basis.shape[1]}"
                )
            value_coefs[n] = c_val
            z_coefs[n] = c_z
            z_fit = basis @ c_z
            t_now = times[:, n - 1]
        y = _fixed_point(cond, t_now, z_fit, driver, scale)

    y0 = float(y[0])  # identical across paths at the degenerate layer
    # stderr of the layer-0 plain average, the dominant sampling error; the
    # fixed point multiplies it by 1/(1 - mesh**2 dg/dy) ~ 1 for admissible g
    y1 = _predict_layer(
        1, value_coefs, z_coefs, degree, levels, times, driver, scale, r,
        terminal_vals,
    )
    stderr = float(y1.std(ddof=1) / np.sqrt(budget))
    z0 = float(z_coefs[0][0])

    # sample path and residual field along path 0
    s0 = _fan_skeleton(mesh, times, signs, raw, 0)
    y_vals = np.empty(r)
    z_vals = np.empty(r)
    for n in range(1, r + 1):
        y_vals[n - 1], z_vals[n - 1] = _predict_state(
            n, levels[0, n - 1], times[0, n - 1], value_coefs, z_coefs, degree,
            driver, scale, r, terminal_vals[0],
        )
    y_path = StepProcess.from_values(s0, y0, y_vals, name="bsde_value")
    g_path = driver(np.concatenate(([0.0], times[0, :-1])),
                    np.concatenate(([y0], y_vals[:-1])),
                    np.concatenate(([z0], z_vals[:-1])))
    gen_est = np.diff(np.concatenate(([y0], y_vals))) / scale
    residual_field = scale * np.abs(gen_est + np.asarray(g_path))

    residuals = _out_of_sample_residuals(
        driver, terminal, mesh, horizon, value_coefs, z_coefs, degree,
        int(test_budget), law, rng, r, y0,
    )
    return BsdeSolution(
        mesh=mesh,
        horizon=float(horizon),
        n_steps=r,
        y_at_zero=y0,
        stderr=stderr,
        z_at_zero=z0,
        value_coefs=tuple(value_coefs),
        z_coefs=tuple(z_coefs),
        degree=int(degree),
        y_path=y_path,
        z_path=z_vals,
        terminal_gap=float(np.abs(y_vals[-1] - terminal_vals[0])),
        residuals=residuals,
        residual_field=residual_field,
        diagnostics=tuple(diagnostics),
    )


def _predict_state(n, level, t, value_coefs, z_coefs, degree, driver, scale, r,
                   terminal_value):
    """Fitted (Y_n, Z_n) at one state; layer r returns the terminal value."""
    if n >= r:
        last = z_coefs[r - 1]
        if last is None:
            z = 0.0
        elif last.size == 1:
            z = float(last[0])
        else:
            row = _poly_basis(np.array([level]), np.array([t]), degree)
            z = float((row @ last)[0])
        return float(terminal_value), z
    if value_coefs[n] is None or value_coefs[n].size == 1:
        cond = float(value_coefs[n][0] if value_coefs[n] is not None else 0.0)
        z = float(z_coefs[n][0]) if z_coefs[n] is not None else 0.0
    else:
        basis = _poly_basis(np.array([level]), np.array([t]), degree)
        cond = float((basis @ value_coefs[n])[0])
        z = float((basis @ z_coefs[n])[0])
    y = cond
    for _ in range(_FP_MAX_ITER):
        y_next = cond + scale * float(driver(t, y, z))
        if abs(y_next - y) <= _FP_TOL * (1.0 + abs(y_next)):
            return y_next, z
        y = y_next
    raise NonContractionError("state prediction fixed point did not converge")


def _predict_layer(n, value_coefs, z_coefs, degree, levels, times, driver, scale,
                   r, terminal_vals):
    """Fitted Y_n across a fan (vectorized); n >= 1."""
    if n >= r:
        return np.asarray(terminal_vals, dtype=np.float64)
    basis = _poly_basis(levels[:, n - 1], times[:, n - 1], degree)
    if value_coefs[n] is None or value_coefs[n].size == 1:
        cond = np.full(levels.shape[0], float(value_coefs[n][0]))
        z = np.full(levels.shape[0], float(z_coefs[n][0]))
    else:
        cond = basis @ value_coefs[n]
        z = basis @ z_coefs[n]
    return _fixed_point(cond, times[:, n - 1], z, driver, scale)


def _out_of_sample_residuals(driver, terminal, mesh, horizon, value_coefs,
                             z_coefs, degree, test_budget, law, rng, r, y0):
    """Signed samples of (Y_{n+1} - Y_n)/mesh**2 + g on fresh paths.

    ``y0`` is the fixed-point layer-0 value; the stored layer-0 coefficient
    is the plain average of Y_1, which still lacks the driver contribution.
    """
    if test_budget <= 0:
        return np.empty(0)
    scale = mesh * mesh
    times, signs, raw = _simulated_fan(mesh, horizon, test_budget, law, rng)
    levels = mesh * np.cumsum(signs, axis=1)
    terminal_vals = _terminal_values(terminal, mesh, times, signs, raw)
    y_layers = np.empty((test_budget, r + 1))
    z_layers = np.empty((test_budget, r))
    y_layers[:, 0] = float(y0)
    z_prev = np.full(test_budget, float(z_coefs[0][0]))
    z_layers[:, 0] = z_prev
    for n in range(1, r + 1):
        if n == r:
            y_layers[:, n] = terminal_vals
        else:
            y_layers[:, n] = _predict_layer(
                n, value_coefs, z_coefs, degree, levels, times, driver, scale,
                r, terminal_vals,
            )
        if n < r:
            basis = _poly_basis(levels[:, n - 1], times[:, n - 1], degree)
            z_layers[:, n] = basis @ z_coefs[n]
    t_padded = np.concatenate(
        (np.zeros((test_budget, 1)), times[:, : r - 1]), axis=1
    )
    g_vals = driver(t_padded, y_layers[:, :r], z_layers)
    resid = np.diff(y_layers, axis=1) / scale + np.asarray(g_vals)
    return resid.ravel()


# -- energy comparison --------------------------------------------------------


def default_perturbations(horizon):
    """Five drift fields on [0, T] with vanishing integral.

    Amplitudes are chosen so every field's primitive has a comparable squared
    norm (about 0.04 T^3): the expected energy margin then sits well clear of
    the Monte Carlo noise on the zero-mean cross term.
    """
    T = float(horizon)
    out = [
        (f"sin{k}", (lambda k: (lambda t: k * np.sin(2.0 * np.pi * k * t / T)))(k))
        for k in (1, 2, 3)
    ]
    out.append(("cos1", lambda t: np.sqrt(3.0) * np.cos(2.0 * np.pi * t / T)))
    out.append(("ramp", lambda t: (T - 2.0 * t) / T))
    return out


@dataclass(frozen=True, eq=False)
class EnergyReport:
    """Energies of the solution's drift primitive against perturbed rivals."""

    solution_energy: float
    names: tuple
    margins: np.ndarray
    margin_stderrs: np.ndarray
    phi_norms: np.ndarray
    lambda_tstat: float
    n_paths: int

    def all_positive(self, sigmas=3.0):
        return bool(np.all(self.margins - sigmas * self.margin_stderrs > 0.0))

    def martingale_ok(self, critical=2.576):
        return bool(abs(self.lambda_tstat) < critical)

    def summary(self):
        return {
            "solution_energy": repr(float(self.solution_energy)),
            "competitors": {
                name: {
                    "margin": repr(float(m)),
                    "stderr": repr(float(s)),
                    "phi_norm_sq": repr(float(p)),
                }
                for name, m, s, p in zip(
                    self.names, self.margins, self.margin_stderrs, self.phi_norms
                )
            },
            "lambda_tstat": repr(float(self.lambda_tstat)),
            "n_paths": int(self.n_paths),
        }


def energy_check(
    solution: BsdeSolution,
    driver,
    terminal: PathFunctional,
    perturbations=None,
    n_paths=2000,
    grid_size=256,
    rng=None,
    law=None,
):
    """Test that the solution's drift primitive has minimal squared energy.

    The primitive L(t) = Y(t) - Y(0) + integral of g accumulates the
    martingale part of the solution; for any perturbation phi with vanishing
    integral over [0, T], the rival L + int(phi) must cost at least the
    solution energy plus |int phi|^2 in expectation (the cross term has zero
    mean).  Raises TerminalMismatchError when a supplied perturbation does
    not integrate to zero, since that would move the rival's terminal value.
    """
    law = law if law is not None else ExitLaw()
    rng = rng if rng is not None else np.random.default_rng()
    T = float(solution.horizon)
    mesh = solution.mesh
    scale = mesh * mesh
    r = solution.n_steps
    grid = np.linspace(0.0, T, int(grid_size) + 1)
    dt = grid[1] - grid[0]

    if perturbations is None:
        perturbations = default_perturbations(T)
    names, phi_paths, phi_norms = [], [], []
    for name, phi in perturbations:
        vals = np.asarray(phi(grid), dtype=np.float64)
        total = float(simpson(vals, x=grid))
        if abs(total) > 1e-6 * (1.0 + np.abs(vals).max()) * T:
            raise TerminalMismatchError(
                f"perturbation {name!r} integrates to {total:.3e}, not 0: "
                "the rival would change the terminal value"
            )
        prim = np.concatenate(([0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * dt)))
        # project out the quadrature residue so the rival's terminal value
        # is preserved exactly in the discrete energy computation
        prim -= (grid / T) * prim[-1]
        names.append(name)
        phi_paths.append(prim)
        phi_norms.append(float(np.sum(prim[:-1] ** 2) * dt))

    times, signs, raw = _simulated_fan(mesh, T, n_paths, law, rng)
    levels = mesh * np.cumsum(signs, axis=1)
    terminal_vals = _terminal_values(terminal, mesh, times, signs, raw)

    # per-path fitted Y, Z and the held driver values
    y_layers = np.empty((n_paths, r + 1))
    z_layers = np.empty((n_paths, r))
    y_layers[:, 0] = float(solution.y_at_zero)
    z_layers[:, 0] = float(solution.z_coefs[0][0])
    for n in range(1, r + 1):
        y_layers[:, n] = _predict_layer(
            n, solution.value_coefs, solution.z_coefs, solution.degree,
            levels, times, driver, scale, r, terminal_vals,
        )
        if n < r:
            basis = _poly_basis(levels[:, n - 1], times[:, n - 1], solution.degree)
            z_layers[:, n] = basis @ solution.z_coefs[n]
    t_padded = np.concatenate((np.zeros((n_paths, 1)), times[:, : r - 1]), axis=1)
    g_layers = np.asarray(driver(t_padded, y_layers[:, :r], z_layers))

    # accumulated primitive at event times; L(0) = 0
    raw_dt = np.diff(np.concatenate((np.zeros((n_paths, 1)), times), axis=1))
    g_int = np.cumsum(g_layers * raw_dt, axis=1)
    lam = y_layers[:, 1:] - y_layers[:, [0]] + g_int

    # grid evaluation (hold-last; truncated/extended to [0, T])
    lam_grid = np.empty((n_paths, grid.size))
    for p in range(n_paths):
        pos = np.searchsorted(times[p], grid, side="right") - 1
        lam_grid[p] = np.where(pos >= 0, lam[p][np.maximum(pos, 0)], 0.0)

    sol_energy_paths = np.sum(lam_grid[:, :-1] ** 2, axis=1) * dt
    margins = np.empty(len(names))
    stderrs = np.empty(len(names))
    for i, prim in enumerate(phi_paths):
        rival = lam_grid + prim[None, :]
        rival_paths = np.sum(rival[:, :-1] ** 2, axis=1) * dt
        diff = rival_paths - sol_energy_paths
        margins[i] = float(diff.mean())
        stderrs[i] = float(diff.std(ddof=1) / np.sqrt(n_paths))

    dlam = np.diff(np.concatenate((np.zeros((n_paths, 1)), lam), axis=1), axis=1)
    flat = dlam.ravel()
    tstat = float(flat.mean() / (flat.std(ddof=1) / np.sqrt(flat.size)))
    return EnergyReport(
        solution_energy=float(sol_energy_paths.mean()),
        names=tuple(names),
        margins=margins,
        margin_stderrs=stderrs,
        phi_norms=np.asarray(phi_norms),
        lambda_tstat=tstat,
        n_paths=int(n_paths),
    )
