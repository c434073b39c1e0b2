"""Optimal stopping: dominance, known values, and the lattice cross-check."""

import numpy as np
import pytest

from hitskel import (
    ConfigError,
    PathFunctional,
    get_functional,
    lattice_reference,
    solve_optimal_stopping,
    waiting_time_quadrature,
)


def test_quadrature_recovers_exit_moments():
    nodes, weights = waiting_time_quadrature()
    assert abs(weights.sum() - 1.0) < 1e-14
    assert abs(np.sum(weights * nodes) - 1.0) < 1e-6
    assert abs(np.sum(weights * nodes**2) - 5.0 / 3.0) < 1e-5


def test_put_at_the_money_is_worth_the_strike():
    # gamma(0) = 1 is the global maximum of the reward, so stopping at once
    # is optimal and the value is exactly the strike
    sol = solve_optimal_stopping(
        get_functional("put", strike=1.0), 0.1, 1.0,
        rng=np.random.default_rng(1),
    )
    assert sol.method == "tree_1d"
    assert sol.stderr == 0.0
    assert sol.n_steps == 100
    assert sol.value_at_zero == 1.0
    assert lattice_reference(get_functional("put", strike=1.0), 1.0, step=1e-3) == 1.0


def test_constant_reward_stops_immediately():
    sol = solve_optimal_stopping(
        get_functional("constant", value=0.7), 0.1, 0.5,
        rng=np.random.default_rng(2),
    )
    assert sol.value_at_zero == 0.7
    assert np.all(sol.stop_decisions)
    assert np.all(sol.value_path.values == 0.7)


def test_martingale_reward_has_zero_value():
    # B^2 - t is a martingale: no stopping rule beats its time-0 value
    sol = solve_optimal_stopping(
        get_functional("square_minus_time"), 0.2, 0.6,
        rng=np.random.default_rng(3),
    )
    assert abs(sol.value_at_zero) < 1e-9


def test_value_dominates_reward_along_paths():
    sol = solve_optimal_stopping(
        get_functional("put", strike=0.8), 0.1, 1.0,
        rng=np.random.default_rng(4),
    )
    assert np.all(sol.value_path.values >= sol.reward_path - 1e-12)
    stopped = sol.stop_decisions
    assert stopped.any()
    assert np.allclose(
        sol.value_path.values[stopped], sol.reward_path[stopped],
        rtol=0.0, atol=1e-9,
    )


def test_reward_shift_shifts_value():
    base = get_functional("put", strike=0.8)
    shifted = PathFunctional(
        "put_plus", lambda t, p: base.fn(t, p) + 0.1
    )
    v0 = solve_optimal_stopping(base, 0.1, 1.0, rng=np.random.default_rng(5))
    v1 = solve_optimal_stopping(shifted, 0.1, 1.0, rng=np.random.default_rng(5))
    assert abs((v1.value_at_zero - v0.value_at_zero) - 0.1) < 1e-12
    # and monotonicity: a pointwise-larger reward never loses value
    assert v1.value_at_zero >= v0.value_at_zero


def test_tree_agrees_with_lattice_on_convex_reward():
    # one-sided payoff max(K - x, 0) is convex, so waiting always pays and
    # the value is the *terminal* expectation E[(K - B_T)^+] ~ 0.843 -- a
    # genuinely nontrivial number both methods must reproduce independently
    reward = PathFunctional(
        "linear_put", lambda t, p: max(0.7 - p.at(t)[0], 0.0)
    )
    sol = solve_optimal_stopping(reward, 0.1, 1.0, rng=np.random.default_rng(6))
    ref = lattice_reference(reward, 1.0, step=1e-3)
    assert ref > 0.75  # strictly better than stopping at once (gamma(0)=0.7)
    assert abs(sol.value_at_zero - ref) < 0.02 * ref


def test_regression_agrees_with_tree():
    reward = get_functional("put", strike=0.7)
    tree = solve_optimal_stopping(reward, 0.2, 0.8, rng=np.random.default_rng(7))
    reg = solve_optimal_stopping(
        reward, 0.2, 0.8, method="regression_mc", budget=4000,
        rng=np.random.default_rng(8),
    )
    assert reg.stderr > 0.0
    assert abs(reg.value_at_zero - tree.value_at_zero) < 3.0 * reg.stderr + 0.02


def test_regression_is_consistent_across_seeds():
    reward = get_functional("put", strike=0.9)
    a = solve_optimal_stopping(
        reward, 0.2, 0.8, method="regression_mc", budget=3000,
        rng=np.random.default_rng(9),
    )
    b = solve_optimal_stopping(
        reward, 0.2, 0.8, method="regression_mc", budget=3000,
        rng=np.random.default_rng(10),
    )
    se = np.hypot(a.stderr, b.stderr)
    assert abs(a.value_at_zero - b.value_at_zero) < 3.0 * se + 1e-3


def test_regression_handles_path_dependent_reward():
    # running max cannot go through the tree; the regression method can
    reward = get_functional("running_max")
    sol = solve_optimal_stopping(
        reward, 0.25, 0.5, method="regression_mc", budget=2000,
        rng=np.random.default_rng(11),
    )
    # E[max of the walk] grows like sqrt(T); just demand a sane band
    assert 0.0 < sol.value_at_zero < 2.0
    assert np.all(sol.value_path.values >= sol.reward_path - 1e-12)


def test_stopping_validation():
    put = get_functional("put")
    with pytest.raises(ConfigError, match="dimension 1"):
        solve_optimal_stopping(put, 0.1, 1.0, dimension=2)
    with pytest.raises(ConfigError, match="Markov"):
        solve_optimal_stopping(get_functional("running_max"), 0.1, 1.0)
    with pytest.raises(ConfigError, match="method"):
        solve_optimal_stopping(put, 0.1, 1.0, method="bogus")
    with pytest.raises(ConfigError, match="budget"):
        solve_optimal_stopping(
            put, 0.1, 1.0, method="regression_mc", budget=10,
            rng=np.random.default_rng(0),
        )
    with pytest.raises(ConfigError, match="Markov"):
        lattice_reference(get_functional("running_max"), 1.0)


def test_summary_payload():
    sol = solve_optimal_stopping(
        get_functional("put"), 0.2, 0.4, rng=np.random.default_rng(12)
    )
    out = sol.summary()
    assert out["method"] == "tree_1d"
    assert out["n_steps"] == sol.n_steps
    assert float(out["value_at_zero"]) == sol.value_at_zero
