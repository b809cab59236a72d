import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import blob_texture, translating_video
from trajsample.flow import FlowField, compute_flow, median_filter_flow, poly_expansion, resize_flow
from trajsample.media_io import Frame


def _interior(a, m=8):
    return a[m:-m, m:-m]


def test_zero_motion_identity():
    f = Frame(np.random.default_rng(0).integers(0, 256, (48, 64), dtype=np.uint8))
    fl = compute_flow(f, f)
    assert np.abs(fl.u).max() <= 1e-3 and np.abs(fl.v).max() <= 1e-3


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 255), st.integers(1, 20), st.integers(1, 20))
def test_zero_motion_any_frame(seed, h, w):
    f = Frame(np.random.default_rng(seed).integers(0, 256, (h, w), dtype=np.uint8))
    fl = compute_flow(f, f)
    assert np.abs(fl.u).max() <= 1e-3 and np.abs(fl.v).max() <= 1e-3


def test_circular_shift_example():
    prev = blob_texture(96, 96, seed=1, sigma=4.0)
    nxt = np.roll(prev, 2, axis=1)  # content moves +2 in x
    fl = compute_flow(prev.astype(np.uint8), nxt.astype(np.uint8))
    assert 1.75 <= np.median(_interior(fl.u)) <= 2.25
    assert -0.25 <= np.median(_interior(fl.v)) <= 0.25


def test_vertical_shift_example():
    prev = blob_texture(96, 96, seed=2, sigma=4.0)
    fl = compute_flow(prev.astype(np.uint8), np.roll(prev, 1, axis=0).astype(np.uint8))
    assert 0.75 <= np.median(_interior(fl.v)) <= 1.25


@pytest.mark.parametrize("dx,dy", [(d, e) for d in range(-3, 4) for e in (-3, -1, 0, 2, 3)])
def test_shift_consistency(dx, dy):
    prev = blob_texture(80, 80, seed=5, sigma=4.0).astype(np.uint8)
    fl = compute_flow(prev, np.roll(prev, (dy, dx), axis=(0, 1)))
    assert abs(np.median(_interior(fl.u)) - dx) <= 0.25
    assert abs(np.median(_interior(fl.v)) - dy) <= 0.25


def test_subpixel_translation():
    fr = translating_video(2, 64, 64, (0.5, -1.25), seed=4)
    fl = compute_flow(fr[0], fr[1])
    assert abs(np.median(_interior(fl.u)) - 0.5) < 0.1
    assert abs(np.median(_interior(fl.v)) + 1.25) < 0.1


def test_deterministic():
    fr = translating_video(2, 40, 50, (1, 1), seed=6)
    assert compute_flow(fr[0], fr[1]) == compute_flow(fr[0], fr[1])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        compute_flow(np.zeros((10, 10), np.uint8), np.zeros((10, 11), np.uint8))


def test_poly_expansion_recovers_quadratic():
    yy, xx = np.mgrid[0:40, 0:40].astype(np.float64)
    img = 3 + 0.5 * xx - 0.25 * yy + 0.01 * xx * xx + 0.02 * yy * yy + 0.03 * xx * yy
    r = poly_expansion(img)
    y, x = 20, 20
    # coefficients are relative to the pixel: linear terms are the gradient there
    assert r.shape[-1] >= 5
    c = r[y, x]
    assert np.allclose(c[:2], [0.5 + 0.02 * x + 0.03 * y, -0.25 + 0.04 * y + 0.03 * x], atol=1e-6)


def test_median_filter_examples():
    c = FlowField(np.full((5, 5), 2.0), np.full((5, 5), -1.0))
    assert median_filter_flow(c, 1) == c
    u = np.zeros((5, 5))
    u[2, 2] = 100
    assert median_filter_flow(FlowField(u, u), 1).u.max() == 0
    g = FlowField(np.arange(1, 10, dtype=np.float32).reshape(3, 3), np.zeros((3, 3)))
    assert median_filter_flow(g, 1).u[1, 1] == 5
    with pytest.raises(ValueError):
        median_filter_flow(c, 0)


def test_median_filter_edge_clamped():
    u = np.arange(9, dtype=np.float32).reshape(3, 3)
    out = median_filter_flow(FlowField(u, u), 1).u
    # corner (0,0) neighbourhood with clamping: 0,0,1,0,0,1,3,3,4 -> median 1
    assert out[0, 0] == 1


def test_resize_flow_scales_vectors():
    f = FlowField(np.full((20, 40), 2.0), np.full((20, 40), -4.0))
    r = resize_flow(f, 20, 10)
    assert r.u.shape == (10, 20)
    assert np.allclose(r.u, 1.0) and np.allclose(r.v, -2.0)
