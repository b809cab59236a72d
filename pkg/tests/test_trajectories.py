import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import blob_texture, translating_video
from trajsample.flow import FlowField, compute_flow
from trajsample.media_io import Frame
from trajsample.trajectories import (ScalePyramid, Trajectory, TrajectorySet, extract_trajectories,
                                     grid_seeds, prune, prune_mask, seed_points, shape_descriptor,
                                     shape_descriptors, track)


def test_pyramid_sizes():
    p = ScalePyramid(320, 240)
    assert len(p) == 6  # 240 * (1/sqrt 2)^6 = 30 < 32
    assert p.sizes[0] == (320, 240) and p.sizes[1] == (226, 170)
    expect = [(int(np.floor(320 * 2 ** (-s / 2) + 0.5)), int(np.floor(240 * 2 ** (-s / 2) + 0.5))) for s in range(8)]
    expect = [e for e in expect if min(e) >= 32]
    assert p.sizes == expect
    assert ScalePyramid(128, 128).sizes == [(128, 128), (91, 91), (64, 64), (45, 45), (32, 32)]


def test_grid_candidates_320x240():
    img = np.random.default_rng(0).integers(0, 256, (240, 320)).astype(np.uint8)
    pts = grid_seeds(img, quality=None)
    assert len(pts) == 64 * 48 == 3072
    assert set(np.unique(pts[:, 0]) % 5) == {2} and pts[:, 0].min() == 2 and pts[:, 1].max() == 5 * 47 + 2


def test_constant_frame_no_seeds():
    f = Frame(np.full((64, 64), 100, np.uint8))
    assert seed_points(f, ScalePyramid(64, 64)) == []


def test_occupied_cell_suppressed():
    img = blob_texture(64, 64, seed=1, sigma=1.0).astype(np.uint8)
    f = Frame(img)
    pyr = ScalePyramid(64, 64)
    base = {p for p, s in seed_points(f, pyr, quality=None) if s == 0}
    after = {p for p, s in seed_points(f, pyr, existing=[((12.0, 12.0), 0)], quality=None) if s == 0}
    assert base - after == {(12.0, 12.0)}
    assert all(not (10 <= x <= 14 and 10 <= y <= 14) for x, y in after)


def test_seed_coordinates_original_resolution():
    f = Frame(blob_texture(128, 128, seed=2, sigma=1.0).astype(np.uint8))
    seeds = seed_points(f, ScalePyramid(128, 128), quality=None)
    assert {s for _, s in seeds} == {0, 1, 2, 3, 4}
    assert all(0 <= x <= 127 and 0 <= y <= 127 for (x, y), _ in seeds)


def _uniform_flows(n, h, w, u, v):
    return [FlowField(np.full((h, w), u, np.float32), np.full((h, w), v, np.float32)) for _ in range(n)]


def test_track_uniform_flow_exact():
    pyr = ScalePyramid(64, 64)
    seeds = [((20.0, 30.0), 0), ((10.0, 10.0), 2)]
    ts = track(seeds, _uniform_flows(15, 64, 64, 1.0, 0.0), pyr)
    assert len(ts) == 2
    assert np.allclose(ts.disp[..., 0], 1.0, atol=1e-5) and np.allclose(ts.disp[..., 1], 0.0, atol=1e-5)


def test_track_exits_discarded():
    pyr = ScalePyramid(64, 64)
    ts = track([((61.0, 30.0), 0), ((20.0, 30.0), 0)], _uniform_flows(15, 64, 64, 1.0, 0.0), pyr)
    assert len(ts) == 1 and ts.start_xy[0, 0] == 20.0


def test_track_zero_flow_then_pruned():
    pyr = ScalePyramid(64, 64)
    seeds = [((x, 30.0), 0) for x in (7.0, 22.0, 37.0)]
    ts = track(seeds, _uniform_flows(15, 64, 64, 0.0, 0.0), pyr)
    assert len(ts) == 3 and np.all(ts.disp == 0)
    assert len(prune(ts)) == 0


def test_track_needs_enough_flows():
    with pytest.raises(ValueError):
        track([((5.0, 5.0), 0)], _uniform_flows(3, 16, 16, 0, 0), ScalePyramid(32, 32))


def test_extract_uniform_translation():
    frames = translating_video(17, 96, 96, (1.0, 0.0), seed=3)
    flows = [compute_flow(frames[i], frames[i + 1]) for i in range(16)]
    ts = extract_trajectories(frames, flows)
    assert len(ts) > 0 and np.all(ts.disp.shape[1:] == (15, 2))
    interior = np.all((ts.positions() >= 16) & (ts.positions() <= 96 - 1 - 16), axis=(1, 2))
    err = np.abs(ts.disp[interior] - np.array([1.0, 0.0])).max()
    assert err <= 0.25


def _traj(disp, scale=0):
    return Trajectory(0, (10.0, 10.0), scale, np.asarray(disp, dtype=np.float32))


def test_prune_examples():
    zero = _traj(np.zeros((15, 2)))
    jump = np.tile([1.0, 0.0], (15, 1))
    jump[7] = [40.0, 0.0]
    uniform = _traj(np.tile([1.0, 0.0], (15, 1)))
    ts = TrajectorySet.from_list([zero, _traj(jump), uniform])
    assert prune_mask(ts).tolist() == [False, False, True]


def test_prune_total_length():
    ts = TrajectorySet.from_list([_traj(np.tile([3.4, 0.0], (15, 1))), _traj(np.tile([3.3, 0.0], (15, 1)))])
    assert prune_mask(ts).tolist() == [False, True]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_prune_idempotent(seed):
    rng = np.random.default_rng(seed)
    n = 30
    disp = rng.normal(0, rng.uniform(0.1, 4), (n, 15, 2))
    disp[rng.random(n) < 0.2, 3] *= 30
    ts = TrajectorySet(np.zeros(n), rng.uniform(0, 50, (n, 2)), rng.integers(0, 4, n), disp)
    once = prune(ts)
    assert prune(once) == once


def test_shape_descriptor_examples():
    assert np.allclose(shape_descriptor(_traj(np.tile([1.0, 0.0], (15, 1)))), np.tile([1 / 15, 0], 15))
    assert np.allclose(shape_descriptor(_traj(np.tile([0.0, 2.0], (15, 1)))), np.tile([0, 1 / 15], 15))
    d = np.zeros((15, 2))
    d[0] = [3, 4]
    out = shape_descriptor(_traj(d))
    assert np.allclose(out[:2], [0.6, 0.8]) and np.all(out[2:] == 0)
    with pytest.raises(ValueError):
        shape_descriptor(_traj(np.zeros((15, 2))))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 100))
def test_shape_descriptor_scale_invariant(seed, k):
    d = np.random.default_rng(seed).normal(size=(15, 2)) + 0.1
    a = shape_descriptor(d)
    assert np.allclose(a, shape_descriptor(k * d), atol=1e-9)
    assert abs(np.hypot(a[0::2], a[1::2]).sum() - 1) < 1e-6


def test_batch_shape_matches_single():
    rng = np.random.default_rng(0)
    ts = TrajectorySet(np.zeros(5), rng.uniform(0, 9, (5, 2)), np.zeros(5), rng.normal(size=(5, 15, 2)))
    batch = shape_descriptors(ts)
    assert np.allclose(batch, [shape_descriptor(t) for t in ts], atol=1e-6)


def test_trajectory_needs_15_steps():
    with pytest.raises(ValueError):
        Trajectory(0, (1.0, 1.0), 0, np.zeros((14, 2)))


def test_set_indexing_and_concat():
    rng = np.random.default_rng(1)
    ts = TrajectorySet(np.arange(4), rng.uniform(0, 9, (4, 2)), np.zeros(4), rng.normal(size=(4, 15, 2)))
    assert TrajectorySet.from_list(list(ts)) == ts
    assert TrajectorySet.concat([ts[:2], ts[2:]]) == ts
    assert ts[1].start_frame == 1
    assert np.allclose(ts.positions()[:, 0], ts.start_xy)


def test_extract_deterministic():
    frames = translating_video(17, 48, 48, (0.5, 1.0), seed=4)
    flows = [compute_flow(frames[i], frames[i + 1]) for i in range(16)]
    assert extract_trajectories(frames, flows) == extract_trajectories(frames, flows)


def test_extract_short_video_empty():
    frames = translating_video(10, 48, 48, (1.0, 0.0))
    flows = [compute_flow(frames[i], frames[i + 1]) for i in range(9)]
    assert len(extract_trajectories(frames, flows)) == 0
