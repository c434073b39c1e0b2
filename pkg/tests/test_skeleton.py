"""Skeleton generation, extraction, persistence, and exact path identities."""

import os

import numpy as np
import pytest

from hitskel import (
    ConfigError,
    GridTooCoarseError,
    Mark,
    ModeMismatchError,
    Skeleton,
    SkeletonConfig,
    coupling_gap,
    extract_from_path,
    generate_intrinsic,
    mesh_schedule,
    substream,
)


def make(mesh=0.2, horizon=1.0, dimension=1, seed=3):
    cfg = SkeletonConfig(mesh=mesh, horizon=horizon, dimension=dimension)
    return generate_intrinsic(cfg, substream(seed, 0))


def brownian_grid(h, horizon, dimension, rng):
    n = int(round(horizon / h))
    grid = np.arange(n + 1) * h
    dw = rng.standard_normal((n, dimension)) * np.sqrt(h)
    vals = np.vstack((np.zeros((1, dimension)), np.cumsum(dw, axis=0)))
    return grid, vals


def test_mesh_schedule():
    m = mesh_schedule([0, 1, 2, 3])
    assert np.allclose(m, [0.4, 0.2, 0.1, 0.05], atol=0.0)
    with pytest.raises(ConfigError):
        mesh_schedule([0, 1], ratio=1.5)


def test_mark_roundtrip():
    for coord in (0, 1, 5):
        for sign in (-1, 1):
            m = Mark(coord, sign)
            assert Mark.decode(m.encode()) == m
    v = Mark(1, -1).vector(3)
    assert v.tolist() == [0.0, -1.0, 0.0]
    with pytest.raises(ValueError):
        Mark(0, 2)
    with pytest.raises(ValueError):
        Mark.decode(0)


def test_config_validation():
    with pytest.raises(ConfigError):
        SkeletonConfig(mesh=0.0, horizon=1.0)
    with pytest.raises(ConfigError):
        SkeletonConfig(mesh=0.1, horizon=-1.0)
    with pytest.raises(ConfigError):
        SkeletonConfig(mesh=0.1, horizon=1.0, dimension=0)
    with pytest.raises(ConfigError):
        SkeletonConfig(mesh=0.1, horizon=1.0, mode="other")


def test_intrinsic_basic_structure():
    s = make(mesh=0.2, horizon=1.0, dimension=2, seed=11)
    assert s.n_events > 0
    assert np.all(np.diff(s.times) >= 0.0)
    assert s.times[0] > 0.0 and s.times[-1] <= s.horizon
    assert set(np.unique(s.coords)) <= {0, 1}
    assert set(np.unique(s.signs)) <= {-1, 1}
    # merged ordering: on ties the lower coordinate comes first
    same = np.flatnonzero(np.diff(s.times) == 0.0)
    assert np.all(s.coords[same] <= s.coords[same + 1])


def test_jump_magnitude_is_exactly_mesh():
    # criterion-grade identity: every jump is the float +-mesh, nothing lost
    s = make(mesh=0.1, horizon=2.0, seed=5)
    jumps = s.jump_vectors()
    nz = jumps[np.arange(s.n_events), s.coords]
    assert np.all(np.abs(nz) == 0.1)
    # and values are origin + mesh * integer walk exactly
    assert np.array_equal(s.values(), s.origin + s.mesh * s.walk)


def test_event_counts_scale_like_inverse_mesh_squared():
    # E[count] = horizon / mesh^2; allow 5 sigma of the renewal CLT
    for mesh in (0.2, 0.1):
        counts = [
            make(mesh=mesh, horizon=1.0, seed=100 + k).n_events for k in range(40)
        ]
        expected = 1.0 / mesh**2
        sd = np.sqrt(expected * (2.0 / 3.0))  # Var(tau) = 2/3
        assert abs(np.mean(counts) - expected) < 5.0 * sd / np.sqrt(40)


def test_walk_is_martingale_like():
    finals = []
    for k in range(200):
        s = make(mesh=0.2, horizon=1.0, seed=500 + k)
        finals.append(s.values()[-1, 0] if s.n_events else 0.0)
    finals = np.asarray(finals)
    se = finals.std(ddof=1) / np.sqrt(finals.size)
    assert abs(finals.mean()) < 4.0 * se


def test_scaling_invariance_bitwise():
    """(mesh, horizon) -> (2*mesh, 4*horizon) with one seed reuses the same
    raw exit draws, so times scale by exactly 4 and marks coincide."""
    a = make(mesh=0.25, horizon=1.0, seed=77)
    b = make(mesh=0.5, horizon=4.0, seed=77)
    assert a.n_events == b.n_events
    assert np.array_equal(a.signs, b.signs)
    assert np.array_equal(4.0 * a.times, b.times)  # power-of-two scaling is exact
    assert np.array_equal(a.scaled_gaps, b.scaled_gaps)


def test_quadratic_variation_and_counting():
    s = make(mesh=0.2, horizon=1.0, dimension=2, seed=8)
    for j in (0, 1):
        tj, _ = s.coordinate_events(j)
        assert s.counting(j, s.horizon) == tj.size
        assert s.quadratic_variation(j, s.horizon) == s.mesh * s.mesh * tj.size
        if tj.size:
            mid = 0.5 * (tj[0] + s.horizon)
            assert s.counting(j, mid) == int(np.searchsorted(tj, mid, side="right"))


def test_angle_bracket_matches_cumulative_hazard(law):
    # the adaptive quadrature must agree with the closed-form -log S per gap
    s = make(mesh=0.2, horizon=0.5, seed=21)
    scale = s.mesh**2
    for j in range(s.dimension):
        tj, _ = s.coordinate_events(j)
        edges = np.concatenate(([0.0], tj, [s.horizon]))
        expected = scale * sum(
            law.cumulative_hazard(gap / scale) for gap in np.diff(edges)
        )
        got = s.angle_bracket(j, s.horizon)
        assert abs(got - expected) < 1e-9 * (1.0 + expected)


def test_angle_bracket_tracks_quadratic_variation():
    # <A_j> and [A_j] agree in expectation: compare averages over paths
    qv, ab = [], []
    for k in range(60):
        s = make(mesh=0.25, horizon=1.0, seed=900 + k)
        qv.append(s.quadratic_variation(0, 1.0))
        ab.append(s.angle_bracket(0, 1.0))
    assert abs(np.mean(qv) - np.mean(ab)) < 0.05


def test_ages_before_events():
    s = Skeleton(
        mesh=0.5,
        horizon=2.0,
        dimension=2,
        mode="intrinsic",
        times=np.array([0.25, 0.75, 1.0]),
        coords=np.array([0, 1, 0]),
        signs=np.array([1, -1, -1]),
        scaled_gaps=np.array([1.0, 3.0, 3.0]),
    )
    ages = s.ages_before_events()
    # scale = 0.25; entry (n, j) is (times[n] - last coord-j event)/scale,
    # so the event's own coordinate shows its scaled waiting time
    assert np.allclose(ages, [[1.0, 1.0], [2.0, 3.0], [3.0, 1.0]], atol=0.0)
    at = s.ages_at(1.5)
    assert np.allclose(at, [(1.5 - 1.0) / 0.25, (1.5 - 0.75) / 0.25], atol=1e-15)


def test_restrict():
    s = make(mesh=0.1, horizon=2.0, seed=13)
    cut = s.restrict(1.0)
    assert cut.horizon == 1.0
    assert np.all(cut.times <= 1.0)
    assert cut.n_events == int(np.sum(s.times <= 1.0))
    with pytest.raises(ValueError):
        s.restrict(3.0)


def test_csv_roundtrip(tmp_path):
    s = make(mesh=0.2, horizon=1.0, dimension=2, seed=4)
    path = os.path.join(tmp_path, "skel.csv")
    s.save_csv(path)
    t = Skeleton.load_csv(path)
    assert t.mesh == s.mesh and t.horizon == s.horizon
    assert t.dimension == s.dimension and t.mode == s.mode
    assert np.array_equal(t.times, s.times)
    assert np.array_equal(t.coords, s.coords)
    assert np.array_equal(t.signs, s.signs)
    # gaps are recomputed from the stored times, so equality is only
    # up to one subtraction/division of roundoff
    assert np.allclose(t.scaled_gaps, s.scaled_gaps, rtol=1e-12, atol=1e-12)
    # byte determinism of the writer itself
    path2 = os.path.join(tmp_path, "skel2.csv")
    t.save_csv(path2)
    assert open(path).read() == open(path2).read()


def test_npz_roundtrip(tmp_path):
    s = make(mesh=0.1, horizon=1.0, dimension=3, seed=6)
    path = os.path.join(tmp_path, "skel.npz")
    s.save_npz(path)
    t = Skeleton.load_npz(path)
    assert np.array_equal(t.times, s.times)
    assert np.array_equal(t.origin, s.origin)
    assert t.mode == s.mode


def test_intrinsic_mode_guard():
    cfg = SkeletonConfig(mesh=0.1, horizon=1.0, mode="path_driven")
    with pytest.raises(ModeMismatchError):
        generate_intrinsic(cfg, substream(0, 0))


# -- extraction from sampled paths -----------------------------------------


def test_extraction_events_are_crossings(rng):
    mesh = 0.1
    grid, vals = brownian_grid(mesh**2 / 100.0, 1.0, 1, rng)
    s = extract_from_path(grid, vals, mesh)
    assert s.mode == "path_driven"
    assert s.n_events > 0
    # levels step by exactly +-mesh from the path's starting point
    jumps = s.jump_vectors()[:, 0]
    assert np.all(np.abs(jumps) == mesh)
    assert np.all(s.origin == vals[0])
    # each event time sits strictly inside one grid cell (interpolated)
    assert np.all((s.times > grid[0]) & (s.times <= grid[-1]))


def test_extraction_grid_too_coarse(rng):
    mesh = 0.1
    grid, vals = brownian_grid(mesh**2 / 20.0, 0.5, 1, rng)  # h = 5e-4 > 1e-4
    with pytest.raises(GridTooCoarseError):
        extract_from_path(grid, vals, mesh)


def test_extraction_boundary_step_allowed(rng):
    # h exactly mesh^2/100 must pass (one-ulp grid jitter tolerated)
    mesh = 0.1
    grid, vals = brownian_grid(mesh**2 / 100.0, 0.2, 1, rng)
    s = extract_from_path(grid, vals, mesh)
    assert s.mesh == mesh


def test_extraction_validation():
    grid = np.array([0.0, 1e-4, 2e-4])
    good = np.zeros((3, 1))
    with pytest.raises(ConfigError):
        extract_from_path(grid[::-1], good, 0.1)
    with pytest.raises(ConfigError):
        extract_from_path(grid, good[:2], 0.1)
    with pytest.raises(ConfigError):
        extract_from_path(grid, good, -0.1)


def test_coupling_gap_small(rng):
    # between crossings the path stays within one mesh of its level; a small
    # overshoot at detection is the only excess
    mesh = 0.05
    grid, vals = brownian_grid(1e-6, 0.5, 1, rng)
    s = extract_from_path(grid, vals, mesh)
    gap = coupling_gap(s, grid, vals)
    assert gap < 1.5 * mesh
    assert gap > 0.0


def test_multicrossing_segment_resolved():
    # a single coarse segment jumping 2.5 mesh levels must produce multiple
    # events with consistent interpolated times
    mesh = 0.1
    h = mesh**2 / 100.0
    grid = np.arange(6) * h
    vals = np.array([0.0, 0.02, 0.05, 0.30, 0.31, 0.33])[:, None]
    s = extract_from_path(grid, vals, mesh)
    # crossings at 0.1, 0.2, 0.3 -> three up events
    assert s.n_events == 3
    assert np.all(s.signs == 1)
    assert np.all(np.diff(s.times) >= 0.0)
    lv = s.values()[:, 0]
    assert np.allclose(lv, [0.1, 0.2, 0.3], atol=0.0)
