
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import blob_texture
from trajsample.flow import FlowField, compute_flow
from trajsample.media_io import Frame
from trajsample.proposals import (BoundaryMap, EdgeGroup, ScoreParams, box_sizes, frame_scores, fuse_scores,
                                  generate_boxes, group_edges, group_table, group_table_fast, image_boundaries,
                                  motion_boundaries, rank_boxes, score_box, score_boxes, score_frame)


def test_params_validation():
    with pytest.raises(ValueError):
        ScoreParams(alpha=-1)
    with pytest.raises(ValueError):
        ScoreParams(max_boxes=0)


def test_constant_frame_boundaries():
    b = image_boundaries(np.full((20, 20), 9, np.uint8))
    assert np.all(b.magnitude == 0)


def test_step_boundaries():
    img = np.zeros((30, 40), np.uint8)
    img[:, 20:] = 255
    b = image_boundaries(img)
    cols = np.nonzero(b.magnitude.any(axis=0))[0]
    assert cols.max() - cols.min() + 1 <= 2
    on = b.magnitude > 0
    d = np.abs(b.orientation[on] - np.pi / 2)
    assert np.all(d <= 0.2)
    assert b.magnitude.max() == 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_boundary_ranges(seed):
    img = np.random.default_rng(seed).integers(0, 256, (17, 23)).astype(np.uint8)
    b = image_boundaries(img)
    assert b.magnitude.min() >= 0 and b.magnitude.max() == 1.0
    assert b.orientation.min() >= 0 and b.orientation.max() < np.pi


def _square_flow(n=48, lo=16, hi=32, u=3.0):
    fu = np.zeros((n, n), np.float32)
    fu[lo:hi, lo:hi] = u
    return FlowField(fu, np.zeros_like(fu))


def test_motion_boundaries_constant():
    assert np.all(motion_boundaries(FlowField(np.full((9, 9), 2.0), np.ones((9, 9)))).magnitude == 0)


def test_motion_boundaries_square():
    b = motion_boundaries(_square_flow())
    yy, xx = np.mgrid[0:48, 0:48]
    # distance to the perimeter of the square occupying pixels 16..31
    inside = (xx >= 16) & (xx <= 31) & (yy >= 16) & (yy <= 31)
    dx = np.minimum(np.abs(xx - 15.5), np.abs(xx - 31.5))
    dy = np.minimum(np.abs(yy - 15.5), np.abs(yy - 31.5))
    near = np.where(inside | ((np.abs(yy - 23.5) <= 8.5) | (np.abs(xx - 23.5) <= 8.5)),
                    np.minimum(np.where(np.abs(yy - 23.5) <= 8.5, dx, 99), np.where(np.abs(xx - 23.5) <= 8.5, dy, 99)),
                    99) <= 2
    assert b.magnitude[near].sum() >= 0.9 * b.magnitude.sum()


def test_motion_boundaries_scale_invariant():
    a = motion_boundaries(_square_flow(u=3.0))
    b = motion_boundaries(_square_flow(u=7.5))
    assert np.allclose(a.magnitude, b.magnitude) and np.allclose(a.orientation, b.orientation)


def _line_map(h, w, pts, orient):
    mag = np.zeros((h, w))
    ori = np.zeros((h, w))
    for (x, y), o in zip(pts, orient):
        mag[y, x], ori[y, x] = 1.0, o
    return BoundaryMap(mag, ori)


def test_grouping_examples():
    assert group_edges(BoundaryMap(np.zeros((8, 8)), np.zeros((8, 8)))) == []
    line = _line_map(30, 30, [(5 + i, 10) for i in range(20)], [0.0] * 20)
    g = group_edges(line)
    assert len(g) == 1 and len(g[0]) == 20 and abs(g[0].magnitude - 20) < 1e-12
    arm1 = [(5 + i, 25) for i in range(20)]
    arm2 = [(5, 24 - i) for i in range(20)]
    ell = _line_map(30, 30, arm1 + arm2, [0.0] * 20 + [np.pi / 2] * 20)
    assert len(group_edges(ell)) == 2


def test_grouping_orientation_wraps():
    # orientations near 0 and near pi are the same axis
    line = _line_map(5, 30, [(2 + i, 2) for i in range(20)], [0.05 if i % 2 else np.pi - 0.05 for i in range(20)])
    assert len(group_edges(line)) == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_groups_partition_and_spread(seed):
    img = blob_texture(40, 40, seed, sigma=1.5).astype(np.uint8)
    b = image_boundaries(img)
    groups = group_edges(b)
    seen = set()
    for g in groups:
        pix = set(zip(g.xs.tolist(), g.ys.tolist()))
        assert not (pix & seen)
        seen |= pix
        d = np.abs(b.orientation[g.ys, g.xs] - g.orientation) % np.pi
        assert np.all(np.minimum(d, np.pi - d) <= np.pi / 8 + 1e-9)
    assert seen == set(zip(*np.nonzero((b.magnitude >= 0.1).T)))
    assert np.allclose(group_table(groups), group_table_fast(b))


def test_box_enumeration_examples():
    assert len(generate_boxes(8, 8)) == 0
    assert generate_boxes(16, 16).tolist() == [[0, 0, 16, 16]]
    b = generate_boxes(320, 240)
    assert 0 < len(b) <= 10_000
    assert np.all(b[:, 0] + b[:, 2] <= 320) and np.all(b[:, 1] + b[:, 3] <= 240)


@settings(max_examples=30, deadline=None)
@given(st.integers(16, 200), st.integers(16, 200), st.integers(1, 3000))
def test_box_count_bounded(w, h, cap):
    b = generate_boxes(w, h, ScoreParams(max_boxes=cap))
    assert len(b) <= cap
    assert np.all(b[:, 0] + b[:, 2] <= w) and np.all(b[:, 1] + b[:, 3] <= h)
    assert len({tuple(r) for r in b.tolist()}) == len(b)


def test_box_sizes_aspects():
    sizes = box_sizes(64, 64)
    assert (16, 16) in sizes and (32, 16) in sizes and (16, 32) in sizes and (20, 15) not in sizes
    assert sizes[0][0] >= sizes[-1][0]  # coarse to fine


def test_score_box_examples():
    g = EdgeGroup(np.array([10, 20, 30]), np.array([10, 15, 20]), 12.0, 0.0)
    assert score_box((50, 50, 40, 40), [g]) == 0
    assert abs(score_box((0, 0, 40, 40), [g]) - 12 / 160 ** 1.5) < 1e-12
    assert abs(score_box((0, 0, 40, 40), [g]) - 0.005930) < 1e-6
    g_border = EdgeGroup(np.array([10, 39]), np.array([10, 20]), 12.0, 0.0)
    assert score_box((0, 0, 40, 40), [g_border]) == 0


def _oracle(box, label, mag, n):
    x, y, w, h = box
    total = 0.0
    for g in range(n):
        ys, xs = np.nonzero(label == g)
        if all(x < px < x + w - 1 and y < py < y + h - 1 for px, py in zip(xs, ys)):
            total += mag[ys, xs].sum()
    return total / (2.0 * (w + h)) ** 1.5


def test_score_boxes_vectorised_matches_score_box():
    img = blob_texture(64, 64, 11, sigma=2.0).astype(np.uint8)
    b = image_boundaries(img)
    groups = group_edges(b)
    boxes = generate_boxes(64, 64)
    fast = score_boxes(boxes, group_table_fast(b))
    slow = np.array([score_box(bx, groups) for bx in boxes])
    assert np.allclose(fast, slow, rtol=1e-12, atol=0)
    assert np.array_equal(fast == 0, slow == 0)


def test_linearity_in_magnitude():
    img = blob_texture(48, 48, 12, sigma=2.0).astype(np.uint8)
    b = image_boundaries(img)
    groups = group_edges(b)
    doubled = [EdgeGroup(g.xs, g.ys, 2 * g.magnitude, g.orientation) for g in groups]
    boxes = generate_boxes(48, 48)
    s1 = np.array([score_box(x, groups) for x in boxes])
    s2 = np.array([score_box(x, doubled) for x in boxes])
    assert np.array_equal(s2, 2 * s1)
    assert np.array_equal(rank_boxes(boxes, s1), rank_boxes(boxes, s2))


def test_fusion_arithmetic():
    assert abs(fuse_scores(0.4, 0.2, 1, 1) - 0.6) < 1e-12


def test_rank_ties():
    boxes = np.array([[5, 1, 16, 16], [0, 1, 16, 16], [0, 0, 20, 16], [0, 0, 16, 16]])
    order = rank_boxes(boxes, np.array([1.0, 1.0, 1.0, 2.0]))
    assert order.tolist() == [3, 2, 1, 0]


def test_score_frame_sorted_and_fused():
    img = blob_texture(40, 40, 13, sigma=2.0).astype(np.uint8)
    nxt = np.roll(img, 1, axis=1)
    flow = compute_flow(img, nxt)
    boxes = score_frame(Frame(img), flow, ScoreParams(alpha=0.7, beta=1.3))
    fused = np.array([b.s_fusion for b in boxes])
    assert np.all(np.diff(fused) <= 0)
    assert all(abs(b.s_fusion - (0.7 * b.s_obj + 1.3 * b.s_motion)) <= 1e-9 for b in boxes)
    assert all(b.s_obj >= 0 and b.s_motion >= 0 for b in boxes)
    with pytest.raises(ValueError):
        score_frame(Frame(img), None, ScoreParams())
    assert len(score_frame(Frame(img), None, ScoreParams(beta=0)))


def _iou(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def checker_scene():
    """Static checkerboard (lots of edge mass) and a textured square moving right by 2 px.

    The square is large compared with the ~8 px over which the flow spreads
    past a moving edge, so its motion contours stay close to it.
    """
    rng = np.random.default_rng(0)
    bg = blob_texture(128, 128, 5, sigma=1.5, lo=80, hi=140)
    yy, xx = np.mgrid[0:36, 0:36]
    bg[8:44, 84:120] = np.where(((xx // 4 + yy // 4) % 2) == 0, 15.0, 240.0)
    tex = blob_texture(40, 40, 1, sigma=1.5, lo=60, hi=160)
    frames = []
    for t in range(2):
        img = bg.copy()
        img[70:110, 16 + 2 * t: 56 + 2 * t] = tex
        frames.append(np.clip(img + rng.normal(0, 1, img.shape), 0, 255).astype(np.uint8))
    return frames, (16, 70, 40, 40), (84, 8, 36, 36)


def test_fusion_prefers_moving_square():
    frames, square, checker = checker_scene()
    flow = compute_flow(frames[0], frames[1])
    fs = frame_scores(frames[0], flow)
    top_obj = fs.ranked(1.0, 0.0)[0]
    top_fused = fs.ranked(1.0, 1.0)[0]
    box = lambda b: (b.x, b.y, b.w, b.h)
    assert _iou(box(top_fused), square) >= 0.3
    assert _iou(box(top_obj), checker) >= 0.3


def test_top_boxes_positive_only():
    frames, _, _ = checker_scene()
    fs = frame_scores(frames[0], None, ScoreParams(beta=0))
    top = fs.top_boxes(1.0, 0.0, 10_000)
    assert len(top) == int((fs.s_obj > 0).sum())
