"""Dense point seeding, flow tracking and trajectory post-filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from . import TRAJ_LEN
from .flow import FlowField, median_filter_flow, resize_flow


def round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


@dataclass(frozen=True)
class TrackParams:
    grid_step: int = 5
    quality: float = 0.001  # fraction of the frame's max min-eigenvalue
    median_radius: int = 1
    length: int = TRAJ_LEN
    num_scales: int = 8
    scale_factor: float = 1.0 / math.sqrt(2.0)
    min_size: int = 32
    static_std: float = 1.0
    max_step_frac: float = 0.7
    max_total: float = 50.0


class ScalePyramid:
    """Per-scale frame sizes; scales narrower than ``min_size`` are dropped."""

    def __init__(self, width: int, height: int, num_scales: int = 8,
                 factor: float = 1.0 / math.sqrt(2.0), min_size: int = 32):
        self.width, self.height = width, height
        self.factor = factor
        self.sizes = []
        for s in range(num_scales):
            f = factor ** s
            w, h = int(math.floor(width * f + 0.5)), int(math.floor(height * f + 0.5))
            if min(w, h) < min_size:
                break
            self.sizes.append((w, h))

    @classmethod
    def from_params(cls, width, height, params: TrackParams):
        return cls(width, height, params.num_scales, params.scale_factor, params.min_size)

    def __len__(self):
        return len(self.sizes)

    def ratio(self, s: int) -> tuple[float, float]:
        """Multiply original coordinates by this to get scale-s coordinates."""
        w, h = self.sizes[s]
        return w / self.width, h / self.height

    def resize(self, img: np.ndarray, s: int) -> np.ndarray:
        if s == 0:
            return img
        return cv2.resize(img, self.sizes[s], interpolation=cv2.INTER_LINEAR)


@dataclass
class Trajectory:
    start_frame: int
    start_point: tuple[float, float]
    scale_index: int
    displacements: np.ndarray  # (15, 2), original-resolution px

    def __post_init__(self):
        self.displacements = np.asarray(self.displacements, dtype=np.float32).reshape(-1, 2)
        if self.displacements.shape[0] != TRAJ_LEN:
            raise ValueError(f"trajectory needs {TRAJ_LEN} displacements")


@dataclass
class TrajectorySet:
    """Column store for many trajectories (the in-memory form of a TRJ1 file)."""

    start_frame: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    start_xy: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.float32))
    scale: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    disp: np.ndarray = field(default_factory=lambda: np.zeros((0, TRAJ_LEN, 2), np.float32))

    def __post_init__(self):
        self.start_frame = np.asarray(self.start_frame, dtype=np.int64).reshape(-1)
        self.start_xy = np.asarray(self.start_xy, dtype=np.float32).reshape(-1, 2)
        self.scale = np.asarray(self.scale, dtype=np.int64).reshape(-1)
        self.disp = np.asarray(self.disp, dtype=np.float32).reshape(-1, TRAJ_LEN, 2)
        n = len(self.start_frame)
        if not (len(self.start_xy) == len(self.scale) == len(self.disp) == n):
            raise ValueError("trajectory columns have inconsistent lengths")

    def __len__(self):
        return len(self.start_frame)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Trajectory(int(self.start_frame[idx]), tuple(map(float, self.start_xy[idx])),
                              int(self.scale[idx]), self.disp[idx])
        return TrajectorySet(self.start_frame[idx], self.start_xy[idx], self.scale[idx], self.disp[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, TrajectorySet):
            return NotImplemented
        return (np.array_equal(self.start_frame, other.start_frame)
                and np.array_equal(self.start_xy, other.start_xy)
                and np.array_equal(self.scale, other.scale)
                and np.array_equal(self.disp, other.disp))

    @classmethod
    def from_list(cls, trajs) -> "TrajectorySet":
        trajs = list(trajs)
        if not trajs:
            return cls()
        return cls(
            [t.start_frame for t in trajs],
            [t.start_point for t in trajs],
            [t.scale_index for t in trajs],
            np.stack([t.displacements for t in trajs]),
        )

    @classmethod
    def concat(cls, sets) -> "TrajectorySet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls()
        return cls(
            np.concatenate([s.start_frame for s in sets]),
            np.concatenate([s.start_xy for s in sets]),
            np.concatenate([s.scale for s in sets]),
            np.concatenate([s.disp for s in sets]),
        )

    def positions(self) -> np.ndarray:
        """(n, 16, 2) points in original coordinates, start point first."""
        pts = np.empty((len(self), TRAJ_LEN + 1, 2), np.float64)
        pts[:, 0] = self.start_xy
        pts[:, 1:] = self.start_xy[:, None, :] + np.cumsum(self.disp.astype(np.float64), axis=1)
        return pts


# seeding -------------------------------------------------------------------

def min_eigenvalue_map(gray: np.ndarray) -> np.ndarray:
    """Smaller eigenvalue of the 3x3-window structure tensor (Sobel derivatives)."""
    img = np.asarray(gray, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    a = ndimage.uniform_filter(gx * gx, 3, mode="nearest")
    b = ndimage.uniform_filter(gx * gy, 3, mode="nearest")
    c = ndimage.uniform_filter(gy * gy, 3, mode="nearest")
    half = 0.5 * (a + c)
    return half - np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))


def grid_seeds(gray_s: np.ndarray, occupied_xy=None, step: int = 5,
               quality: float | None = 0.001) -> np.ndarray:
    """Grid candidates at one scale, in that scale's coordinates; (n, 2) float."""
    h, w = gray_s.shape
    nx, ny = w // step, h // step
    if nx == 0 or ny == 0:
        return np.zeros((0, 2))
    free = np.ones((ny, nx), bool)
    if occupied_xy is not None and len(occupied_xy):
        cells = np.floor(np.asarray(occupied_xy, dtype=np.float64) / step).astype(np.int64)
        ok = (cells[:, 0] >= 0) & (cells[:, 0] < nx) & (cells[:, 1] >= 0) & (cells[:, 1] < ny)
        free[cells[ok, 1], cells[ok, 0]] = False
    jj, ii = np.nonzero(free)
    xs, ys = ii * step + step // 2, jj * step + step // 2
    if quality is not None:
        eig = min_eigenvalue_map(gray_s)
        thr = quality * eig.max()
        keep = eig[ys, xs] > thr
        xs, ys = xs[keep], ys[keep]
    return np.stack([xs, ys], axis=1).astype(np.float64)


def seed_points(frame, pyramid: ScalePyramid, existing=(), step: int = 5,
                quality: float | None = 0.001):
    """Return ``[((x, y), scale), ...]`` in original coordinates.

    ``existing`` holds active track heads as ``((x, y), scale)`` pairs.
    Pass ``quality=None`` to skip the texture filter.
    """
    gray = frame.gray() if hasattr(frame, "gray") else np.asarray(frame)
    out = []
    for s in range(len(pyramid)):
        rx, ry = pyramid.ratio(s)
        heads = np.array([p for p, sc in existing if sc == s], dtype=np.float64).reshape(-1, 2)
        heads = heads * (rx, ry)
        pts = grid_seeds(pyramid.resize(gray, s), heads, step, quality)
        out.extend(((float(x / rx), float(y / ry)), s) for x, y in pts)
    return out


# tracking ------------------------------------------------------------------

class ScaledFlows:
    """Median-filtered flow per (scale, frame), computed lazily."""

    def __init__(self, flows, pyramid: ScalePyramid, radius: int = 1):
        self.flows = list(flows)
        self.pyramid = pyramid
        self.radius = radius
        self._cache = {}

    def __call__(self, s: int, t: int) -> FlowField:
        key = (s, t)
        if key not in self._cache:
            w, h = self.pyramid.sizes[s]
            self._cache[key] = median_filter_flow(resize_flow(self.flows[t], w, h), self.radius)
        return self._cache[key]


def _step(pts: np.ndarray, flow: FlowField):
    """Advance scale-space points by one frame; returns new points and in-bounds mask."""
    h, w = flow.u.shape
    ix = np.clip(round_half_up(pts[:, 0]), 0, w - 1)
    iy = np.clip(round_half_up(pts[:, 1]), 0, h - 1)
    new = pts + np.stack([flow.u[iy, ix], flow.v[iy, ix]], axis=1).astype(np.float64)
    inside = (new[:, 0] >= 0) & (new[:, 0] <= w - 1) & (new[:, 1] >= 0) & (new[:, 1] <= h - 1)
    return new, inside


def _to_set(hist_s: np.ndarray, start_frames, s: int, pyramid: ScalePyramid) -> TrajectorySet:
    rx, ry = pyramid.ratio(s)
    hist = hist_s / np.array([rx, ry])
    return TrajectorySet(
        start_frames,
        hist[:, 0],
        np.full(len(hist), s),
        np.diff(hist, axis=1),
    )


def track(seeds, flows, pyramid: ScalePyramid, start_frame: int = 0,
          length: int = TRAJ_LEN, median_radius: int = 1) -> TrajectorySet:
    """Track ``[((x, y), scale), ...]`` seeds through ``flows[0..length-1]``.

    ``flows[k]`` is the full-resolution flow from frame ``start_frame + k`` to the
    next.  Tracks that leave the frame are discarded.
    """
    if len(flows) < length:
        raise ValueError(f"need {length} flow fields, got {len(flows)}")
    sflows = flows if isinstance(flows, ScaledFlows) else ScaledFlows(flows, pyramid, median_radius)
    out = []
    for s in range(len(pyramid)):
        rx, ry = pyramid.ratio(s)
        pts = np.array([p for p, sc in seeds if sc == s], dtype=np.float64).reshape(-1, 2) * (rx, ry)
        hist = [pts]
        alive = np.ones(len(pts), bool)
        for k in range(length):
            nxt, inside = _step(hist[-1], sflows(s, k))
            alive &= inside
            hist.append(nxt)
        hist = np.stack(hist, axis=1)[alive]
        out.append(_to_set(hist, np.full(len(hist), start_frame), s, pyramid))
    return TrajectorySet.concat(out)


def extract_trajectories(frames, flows, params: TrackParams = TrackParams()) -> TrajectorySet:
    """Dense trajectories over a whole sequence, re-seeding free grid cells every frame.

    ``flows[t]`` is the flow from frame t to t+1.  Output is pruned and ordered by
    (scale, completion frame, seed order).
    """
    grays = [f.gray() if hasattr(f, "gray") else np.asarray(f, np.uint8) for f in frames]
    n_frames = len(grays)
    h, w = grays[0].shape
    pyramid = ScalePyramid.from_params(w, h, params)
    sflows = ScaledFlows(flows, pyramid, params.median_radius)
    L = params.length
    done = []
    for s in range(len(pyramid)):
        hist = np.zeros((0, L + 1, 2))
        starts = np.zeros(0, np.int64)
        count = np.zeros(0, np.int64)
        for t in range(n_frames):
            if t > 0 and len(count):
                # advance every active track from frame t-1 to t
                idx = np.arange(len(count))
                nxt, inside = _step(hist[idx, count - 1], sflows(s, t - 1))
                hist[idx, count] = nxt
                count = count + 1
                keep = inside
                fin = keep & (count == L + 1)
                if fin.any():
                    done.append(_to_set(hist[fin], starts[fin], s, pyramid))
                keep &= ~fin
                hist, starts, count = hist[keep], starts[keep], count[keep]
            if t + L <= n_frames - 1:
                heads = hist[np.arange(len(count)), count - 1] if len(count) else None
                new = grid_seeds(pyramid.resize(grays[t], s), heads, params.grid_step, params.quality)
                if len(new):
                    block = np.zeros((len(new), L + 1, 2))
                    block[:, 0] = new
                    hist = np.concatenate([hist, block])
                    starts = np.concatenate([starts, np.full(len(new), t)])
                    count = np.concatenate([count, np.ones(len(new), np.int64)])
    return prune(TrajectorySet.concat(done), params)


# filtering -----------------------------------------------------------------

def prune_mask(trajs: TrajectorySet, params: TrackParams = TrackParams()) -> np.ndarray:
    if len(trajs) == 0:
        return np.zeros(0, bool)
    f = params.scale_factor ** trajs.scale.astype(np.float64)
    disp = trajs.disp.astype(np.float64) * f[:, None, None]
    pos = np.concatenate([np.zeros((len(trajs), 1, 2)), np.cumsum(disp, axis=1)], axis=1)
    std = pos.std(axis=1)
    static = (std[:, 0] < params.static_std) & (std[:, 1] < params.static_std)
    mags = np.hypot(disp[..., 0], disp[..., 1])
    total = mags.sum(axis=1)
    erratic = (total > params.max_total) | (mags.max(axis=1) > params.max_step_frac * total)
    return ~(static | erratic)


def prune(trajs: TrajectorySet, params: TrackParams = TrackParams()) -> TrajectorySet:
    """Drop static tracks and tracks with an implausible jump or total length."""
    return trajs[prune_mask(trajs, params)]


def shape_descriptor(t) -> np.ndarray:
    """30-dim displacement sequence normalised by its total length."""
    d = np.asarray(t.displacements if isinstance(t, Trajectory) else t, dtype=np.float64).reshape(-1, 2)
    total = np.hypot(d[:, 0], d[:, 1]).sum()
    if total <= 0:
        raise ValueError("trajectory has zero total displacement")
    return (d / total).ravel()


def shape_descriptors(trajs: TrajectorySet) -> np.ndarray:
    d = trajs.disp.astype(np.float64)
    total = np.hypot(d[..., 0], d[..., 1]).sum(axis=1)
    if np.any(total <= 0):
        raise ValueError("trajectory has zero total displacement")
    return (d / total[:, None, None]).reshape(len(trajs), -1)
