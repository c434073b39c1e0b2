"""End-to-end acceptance: ten numbered criteria, one verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines
as they complete (without ``-s`` they still appear for failures).  Budgets
and seeds are pinned; the whole file takes roughly three minutes single
threaded, dominated by the derivative-decay schedule (criterion 5) and the
fine-mesh backward solve (criterion 7).

Statistical criteria use three-standard-error gates (3.5 where the compared
quantity is itself a fitted functional rather than a plain mean).  Exact
criteria (3, and the identity parts of 4 and 6) tolerate nothing beyond an
explicit 1e-9 roundoff allowance where an enumeration reports zero standard
error.
"""

import dataclasses
import hashlib
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats

from hitskel import (
    ExitLaw,
    History,
    SkeletonConfig,
    build_functional_structure,
    conditional_generator,
    covariation,
    decompose,
    derivative_error,
    energy_check,
    generate_intrinsic,
    generator_field,
    get_derivative_reference,
    get_functional,
    lattice_reference,
    list_functionals,
    make_driver,
    solve_bsde,
    solve_optimal_stopping,
)
from hitskel.skeleton import extract_from_path
from hitskel.streams import substream


def _verdict(num, name, ok, detail):
    flag = "PASS" if ok else "FAIL"
    print(f"criterion {num:02d} [{name}]: {flag} -- {detail}")
    return bool(ok)


def _truncate_to_events(s, r):
    assert s.n_events >= r
    return dataclasses.replace(
        s,
        horizon=float(s.times[r - 1]),
        times=s.times[:r].copy(),
        coords=s.coords[:r].copy(),
        signs=s.signs[:r].copy(),
        scaled_gaps=s.scaled_gaps[:r].copy(),
    )


def test_criterion_01_exit_law_moments_and_ks():
    law = ExitLaw()
    t0 = time.perf_counter()
    draws = law.sample(10**6, substream(2026, 0))
    mean_gap = abs(float(draws.mean()) - 1.0)
    second = float(np.mean(draws**2))
    second_gap = abs(second - 5.0 / 3.0)
    second_tol = 3.0 * float(np.std(draws**2, ddof=1)) / 1000.0
    elapsed = time.perf_counter() - t0
    mean_tol = 3.0 * np.sqrt(2.0 / 3.0) / 1000.0

    ks = stats.kstest(law.sample(10**5, substream(2026, 1)), law.cdf)
    ks_crit = 1.628 / np.sqrt(10**5)  # asymptotic 1% point

    ok = (
        mean_gap <= mean_tol
        and second_gap <= second_tol
        and ks.statistic <= ks_crit
        and elapsed <= 60.0
    )
    assert _verdict(
        1, "exit law", ok,
        f"|mean-1|={mean_gap:.2e}<={mean_tol:.2e}, "
        f"|m2-5/3|={second_gap:.2e}<={second_tol:.2e}, "
        f"KS={ks.statistic:.2e}<={ks_crit:.2e}, {elapsed:.1f}s<=60s",
    )


def test_criterion_02_pathwise_coupling():
    eps, h, horizon = 0.05, 1e-6, 1.0
    bound = eps + 3.0 * np.sqrt(h)
    rng = np.random.default_rng(1234)
    n_grid = int(round(horizon / h)) + 1
    grid = h * np.arange(n_grid)
    worst = 0.0
    good = 0
    for _ in range(100):
        z = rng.standard_normal(n_grid - 1)
        path = np.concatenate(([0.0], np.cumsum(np.sqrt(h) * z)))
        s = extract_from_path(grid, path, eps)
        levels = np.concatenate(([0.0], eps * np.cumsum(s.signs)))
        pos = np.searchsorted(s.times, grid, side="right")
        sup = float(np.max(np.abs(levels[pos] - path)))
        worst = max(worst, sup)
        good += int(sup <= bound)
    ok = good == 100
    assert _verdict(
        2, "coupling", ok,
        f"{good}/100 paths with sup|A-B|<= {bound:.4f}; worst {worst:.6f}",
    )


def test_criterion_03_exact_identities():
    cfg = SkeletonConfig(mesh=0.2, horizon=2.0, dimension=2)
    intrinsic = generate_intrinsic(cfg, substream(33, 0))
    h = 0.2 * 0.2 / 100.0
    grid = h * np.arange(int(round(2.0 / h)) + 1)
    rng = np.random.default_rng(33)
    bm = np.concatenate(
        (np.zeros((1, 2)), np.cumsum(np.sqrt(h) * rng.standard_normal((grid.size - 1, 2)), axis=0))
    )
    extracted = extract_from_path(grid, bm, 0.2)

    telescoped = 0
    for s in (intrinsic, extracted):
        # merged-event ordering and per-coordinate consistency
        assert np.all(np.diff(s.times) > 0.0)
        recon = np.sort(np.concatenate([s.coordinate_events(j)[0] for j in range(2)]))
        assert np.array_equal(recon, s.times)
        # jump magnitude: the nonzero entry of every jump is the float +-mesh
        jumps = s.jump_vectors()
        hit = jumps[np.arange(s.n_events), s.coords]
        assert np.all(np.abs(hit) == s.mesh)
        assert np.count_nonzero(jumps) == s.n_events
        # telescoping reconstruction of every registered functional
        for name in list_functionals():
            x = build_functional_structure(get_functional(name), s)
            assert np.array_equal(x.values, x.initial + np.cumsum(x.increments)), name
            telescoped += 1

    # covariation across coordinates has disjoint support: exactly zero
    x0 = build_functional_structure(get_functional("coordinate", j=0), intrinsic)
    x1 = build_functional_structure(get_functional("coordinate", j=1), intrinsic)
    assert covariation(x0, 1) == 0.0
    assert covariation(x1, 0) == 0.0
    assert covariation(x0, 0) == intrinsic.quadratic_variation(0, intrinsic.horizon)

    assert _verdict(
        3, "exact identities", True,
        f"{telescoped} telescoping reconstructions, ordering, jumps, "
        "covariation disjointness -- all bit-exact",
    )


def test_criterion_04_compensator():
    mesh, horizon, r, reps = 0.1, 1.0, 100, 1000
    clock = get_functional("time")
    coord = get_functional("coordinate")
    cfg = SkeletonConfig(mesh=mesh, horizon=2.0)
    n_clock = np.empty(reps)
    n_coord = np.empty(reps)
    for i in range(reps):
        s = _truncate_to_events(generate_intrinsic(cfg, substream(77, i)), r)
        for out, f in ((n_clock, clock), (n_coord, coord)):
            x = build_functional_structure(f, s)
            _, comp = decompose(x, generator_field(f, s, method="exact"))
            out[i] = comp.initial + float(comp.increments.sum())
    clock_gap = abs(float(n_clock.mean()) - horizon)
    clock_tol = 3.0 * float(n_clock.std(ddof=1)) / np.sqrt(reps)
    coord_gap = abs(float(n_coord.mean()))
    coord_tol = 3.0 * float(n_coord.std(ddof=1)) / np.sqrt(reps) + 1e-9
    ok = clock_gap <= clock_tol and coord_gap <= coord_tol
    assert _verdict(
        4, "compensator", ok,
        f"clock |mean N - T|={clock_gap:.2e}<={clock_tol:.2e}; "
        f"coordinate |mean N|={coord_gap:.2e}<={coord_tol:.2e}",
    )


def test_criterion_05_derivative_recovery():
    t0 = time.perf_counter()
    report = derivative_error(
        "square_minus_time",
        get_derivative_reference("square_minus_time"),
        [2, 3, 4, 5, 6],
        horizon=1.0,
        replications=1000,
        master_seed=2026,
        workers=1,
    )
    elapsed = time.perf_counter() - t0
    err = report.columns["derivative_error"]
    violations = int(np.sum(np.diff(err) >= 0.0))
    ratio = float(err[-1] / err[0])
    ok = violations <= 1 and ratio <= 0.25 and elapsed <= 600.0
    assert _verdict(
        5, "derivative recovery", ok,
        f"errors {[float(f'{e:.3e}') for e in err]}, "
        f"{violations} violations, final/initial={ratio:.2e}<=0.25, "
        f"{elapsed:.0f}s<=600s",
    )


def test_criterion_06_generator_closed_forms():
    mesh = 0.1
    smt = get_functional("square_minus_time")
    cfg = SkeletonConfig(mesh=mesh, horizon=1.0)

    hits = total = 0
    pooled = []
    for i in range(30):
        s = generate_intrinsic(cfg, substream(303, i))
        fld = generator_field(smt, s, method="exact")
        dt = np.diff(np.concatenate(([0.0], s.times)))
        closed = (mesh * mesh - dt) / (mesh * mesh)
        ok_ev = np.abs(fld.generator - closed) <= 3.0 * fld.generator_stderr + 1e-9
        hits += int(ok_ev.sum())
        total += ok_ev.size
    pooled = np.concatenate(
        [
            generator_field(smt, generate_intrinsic(cfg, substream(303, i)), method="exact").generator
            for i in range(30)
        ]
    )
    frac = hits / total
    pooled_t = float(pooled.mean() / (pooled.std(ddof=1) / np.sqrt(pooled.size)))

    us, ses = np.empty(40), np.empty(40)
    for i in range(40):
        s = generate_intrinsic(cfg, substream(404, i))
        us[i], ses[i] = conditional_generator(
            smt, History.from_skeleton(s), mesh, mc_budget=400, rng=substream(405, i)
        )
    cond_t = float(us.mean() / np.sqrt(np.mean(ses**2) / us.size))

    ok = frac >= 0.99 and abs(pooled_t) <= 3.0 and abs(cond_t) <= 3.0
    assert _verdict(
        6, "generator closed forms", ok,
        f"per-event match {frac:.4f}>=0.99 ({total} events), "
        f"pooled U t={pooled_t:.2f}, conditional t={cond_t:.2f}",
    )


def test_criterion_07_bsde_oracle():
    g, lip = make_driver("linear_y", alpha=0.5)
    terminal = get_functional("square")
    sol = solve_bsde(
        g, terminal, 0.05, 1.0, budget=12000, test_budget=2000,
        rng=np.random.default_rng(2026), lipschitz=lip,
    )
    target = float(np.exp(0.5))
    gap = abs(sol.y_at_zero - target)
    tol = 0.05 * target
    tstat = sol.residual_tstat()

    # driver switched off: the root reduces to the plain conditional
    # expectation E[B(T)^2], whose discrete value is n_steps * mesh^2
    g0, l0 = make_driver("zero")
    red = solve_bsde(
        g0, terminal, 0.1, 1.0, budget=8000, test_budget=0,
        rng=np.random.default_rng(4), lipschitz=l0,
    )
    red_sd = np.sqrt(2.0 * 100 * 99) * 0.01 / np.sqrt(8000)
    red_gap = abs(red.y_at_zero - 1.0)

    ok = (
        gap <= tol
        and abs(tstat) <= 3.0
        and sol.terminal_gap == 0.0
        and red_gap <= 3.0 * red_sd
    )
    assert _verdict(
        7, "bsde", ok,
        f"|Y(0)-e^0.5|={gap:.2e}<={tol:.2e}, residual t={tstat:.2f}, "
        f"terminal gap 0, reduction |Y0-1|={red_gap:.3f}<={3*red_sd:.3f}",
    )


def test_criterion_08_energy_minimization():
    g, lip = make_driver("linear_y", alpha=0.5)
    terminal = get_functional("square")
    sol = solve_bsde(
        g, terminal, 0.1, 1.0, budget=8000, test_budget=1000,
        rng=np.random.default_rng(4), lipschitz=lip,
    )
    rep = energy_check(sol, g, terminal, n_paths=2000,
                       rng=np.random.default_rng(101))
    min_margin = float(np.min(rep.margins - 3.0 * rep.margin_stderrs))
    ok = rep.all_positive(3.0) and rep.martingale_ok(2.576)
    assert _verdict(
        8, "energy minimization", ok,
        f"min(margin - 3 s.e.)={min_margin:.4f}>0 over {len(rep.names)} "
        f"perturbations, lambda t={rep.lambda_tstat:.2f} (1% gate 2.576)",
    )


def test_criterion_09_stopping_vs_lattice():
    reward = get_functional("put", strike=1.0)
    sol = solve_optimal_stopping(reward, mesh=0.1, horizon=1.0, method="tree_1d")
    ref = lattice_reference(reward, 1.0, step=1e-4)
    rel_gap = abs(sol.value_at_zero - ref) / abs(ref)
    ok = rel_gap <= 0.02
    assert _verdict(
        9, "optimal stopping", ok,
        f"value {sol.value_at_zero!r} vs lattice {ref!r}, rel gap {rel_gap:.2e}<=0.02",
    )


def test_criterion_10_worker_determinism(tmp_path):
    base = [
        sys.executable, "-m", "hitskel.cli", "convergence-report",
        "--seed", "7", "--set", "levels=2,3,4", "--set", "replications=30",
    ]
    digests = {}
    # workers=1 run twice (rerun identity) plus 4 and 8
    for tag, workers in (("1a", 1), ("1b", 1), ("4", 4), ("8", 8)):
        out = tmp_path / f"w{tag}"
        proc = subprocess.run(
            base + ["--out", str(out), "--workers", str(workers)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        for name in ("manifest.json", "report.json", "report.csv"):
            with open(out / name, "rb") as fh:
                digests.setdefault(name, set()).add(
                    hashlib.sha256(fh.read()).hexdigest()
                )
    ok = all(len(v) == 1 for v in digests.values())
    assert _verdict(
        10, "determinism", ok,
        "manifest/report.json/report.csv sha256 identical across "
        "workers 1, 1 (rerun), 4, 8",
    )
