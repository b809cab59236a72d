"""EdgeBox-style proposals scored on image and motion boundaries.

Boundaries come from a Sobel + non-maximum-suppression estimator (behind the
``BoundaryMap`` interface, so a learned detector could replace it).  Edge
pixels are grouped into orientation-coherent contours; a box scores the total
magnitude of the contours it wholly encloses, divided by its perimeter raised
to ``kappa``.  The fused score mixes the normalised image and motion scores
linearly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage


@dataclass
class BoundaryMap:
    magnitude: np.ndarray  # (h, w) in [0, 1]
    orientation: np.ndarray  # (h, w) in [0, pi)

    @property
    def width(self) -> int:
        return self.magnitude.shape[1]

    @property
    def height(self) -> int:
        return self.magnitude.shape[0]


@dataclass
class EdgeGroup:
    xs: np.ndarray
    ys: np.ndarray
    magnitude: float
    orientation: float

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """(x_min, y_min, x_max, y_max), inclusive."""
        return int(self.xs.min()), int(self.ys.min()), int(self.xs.max()), int(self.ys.max())

    def __len__(self):
        return len(self.xs)


@dataclass(frozen=True)
class ScoreParams:
    alpha: float = 1.0
    beta: float = 1.0
    kappa: float = 1.5
    max_boxes: int = 10_000
    top_n_votes: int = 1_000
    theta_group: float = np.pi / 8
    min_magnitude: float = 0.1
    min_side: int = 16
    scale_step: float = 1.25
    aspects: tuple = (0.5, 0.75, 1.0, 4.0 / 3.0, 2.0)
    stride_frac: float = 0.2

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.max_boxes < 1:
            raise ValueError("max_boxes must be >= 1")


@dataclass
class ProposalBox:
    x: int
    y: int
    w: int
    h: int
    s_obj: float = 0.0
    s_motion: float = 0.0
    s_fusion: float = 0.0


# boundary estimation ----------------------------------------------------------

def _nms(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels not smaller than both neighbours along the gradient direction."""
    h, w = mag.shape
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    q = np.floor(ang / (np.pi / 4) + 0.5).astype(np.int64) % 4  # 0: x, 1: diag, 2: y, 3: anti-diag
    offsets = [(0, 1), (1, 1), (1, 0), (1, -1)]
    padded = np.pad(mag, 1, mode="edge")
    keep = np.zeros_like(mag, dtype=bool)
    for k, (dy, dx) in enumerate(offsets):
        fwd = padded[1 + dy: 1 + dy + h, 1 + dx: 1 + dx + w]
        bwd = padded[1 - dy: 1 - dy + h, 1 - dx: 1 - dx + w]
        sel = q == k
        keep |= sel & (mag >= fwd) & (mag >= bwd)
    return np.where(keep & (mag > 0), mag, 0.0)


def _normalized(mag: np.ndarray) -> np.ndarray:
    m = mag.max() if mag.size else 0.0
    return mag / m if m > 0 else np.zeros_like(mag)


def _sobel(img: np.ndarray):
    img = np.asarray(img, dtype=np.float64)
    return ndimage.sobel(img, axis=1, mode="nearest"), ndimage.sobel(img, axis=0, mode="nearest")


def image_boundaries(frame) -> BoundaryMap:
    gray = frame.gray() if hasattr(frame, "gray") else np.asarray(frame)
    gx, gy = _sobel(gray)
    mag = _normalized(_nms(np.hypot(gx, gy), gx, gy))
    orient = np.mod(np.arctan2(gy, gx) + np.pi / 2, np.pi)
    return BoundaryMap(mag, orient)


def motion_boundaries(flow) -> BoundaryMap:
    ux, uy = _sobel(flow.u)
    vx, vy = _sobel(flow.v)
    mu, mv = np.hypot(ux, uy), np.hypot(vx, vy)
    dom_u = mu >= mv
    gx, gy = np.where(dom_u, ux, vx), np.where(dom_u, uy, vy)
    mag = _normalized(_nms(np.sqrt(mu * mu + mv * mv), gx, gy))
    orient = np.mod(np.arctan2(gy, gx) + np.pi / 2, np.pi)
    return BoundaryMap(mag, orient)


# grouping -------------------------------------------------------------------------

@numba.njit(cache=True)
def _wrap_axial(a):
    """Map an axial angle difference into [-pi/2, pi/2)."""
    return (a + 0.5 * np.pi) % np.pi - 0.5 * np.pi


@numba.njit(cache=True)
def _group_kernel(mag, orient, theta, min_mag):
    h, w = mag.shape
    label = -np.ones((h, w), np.int64)
    qx = np.empty(h * w, np.int64)
    qy = np.empty(h * w, np.int64)
    dxs = np.array([-1, 0, 1, -1, 1, -1, 0, 1])
    dys = np.array([-1, -1, -1, 0, 0, 1, 1, 1])
    n_groups = 0
    for y in range(h):
        for x in range(w):
            if label[y, x] >= 0 or mag[y, x] < min_mag:
                continue
            g = n_groups
            n_groups += 1
            label[y, x] = g
            o0 = orient[y, x]
            sc = np.cos(2.0 * o0)
            ss = np.sin(2.0 * o0)
            lo, hi = 0.0, 0.0  # member orientations relative to o0
            head, tail = 0, 1
            qx[0], qy[0] = x, y
            while head < tail:
                cx, cy = qx[head], qy[head]
                head += 1
                for k in range(8):
                    nx, ny = cx + dxs[k], cy + dys[k]
                    if nx < 0 or ny < 0 or nx >= w or ny >= h:
                        continue
                    if label[ny, nx] >= 0 or mag[ny, nx] < min_mag:
                        continue
                    o = orient[ny, nx]
                    r = _wrap_axial(o - o0)
                    sc2 = sc + np.cos(2.0 * o)
                    ss2 = ss + np.sin(2.0 * o)
                    m = _wrap_axial(0.5 * np.arctan2(ss2, sc2) - o0)
                    lo2, hi2 = min(lo, r), max(hi, r)
                    # every member, the candidate included, must stay within theta of the new mean
                    if hi2 - m > theta or m - lo2 > theta:
                        continue
                    label[ny, nx] = g
                    sc, ss, lo, hi = sc2, ss2, lo2, hi2
                    qx[tail], qy[tail] = nx, ny
                    tail += 1
    return label, n_groups


def group_labels(b: BoundaryMap, theta_group: float = np.pi / 8, min_magnitude: float = 0.1):
    """Label image (-1 = unassigned) and group count."""
    mag = np.ascontiguousarray(b.magnitude, dtype=np.float64)
    orient = np.ascontiguousarray(b.orientation, dtype=np.float64)
    return _group_kernel(mag, orient, float(theta_group), float(min_magnitude))


def group_edges(b: BoundaryMap, theta_group: float = np.pi / 8,
                min_magnitude: float = 0.1) -> list[EdgeGroup]:
    """Greedy raster-order flood over 8-connected edge pixels of similar orientation.

    A pixel joins the current chain only if, after adding it, every member is
    within ``theta_group`` (mod pi) of the chain's axial mean.
    """
    label, n = group_labels(b, theta_group, min_magnitude)
    groups = []
    ys, xs = np.nonzero(label >= 0)
    lab = label[ys, xs]
    order = np.argsort(lab, kind="stable")
    bounds = np.searchsorted(lab[order], np.arange(n + 1))
    for g in range(n):
        idx = order[bounds[g]: bounds[g + 1]]
        gx, gy = xs[idx], ys[idx]
        th = b.orientation[gy, gx]
        mean = 0.5 * np.arctan2(np.sin(2 * th).sum(), np.cos(2 * th).sum()) % np.pi
        groups.append(EdgeGroup(gx, gy, float(b.magnitude[gy, gx].sum()), float(mean)))
    return groups


def group_table(groups) -> np.ndarray:
    """(G, 5) array: x_min, y_min, x_max, y_max, total magnitude."""
    if not groups:
        return np.zeros((0, 5))
    return np.array([(*g.bbox, g.magnitude) for g in groups], dtype=np.float64)


def group_table_fast(b: BoundaryMap, params: ScoreParams = ScoreParams()) -> np.ndarray:
    """Same as ``group_table(group_edges(b))`` without building per-group objects."""
    label, n = group_labels(b, params.theta_group, params.min_magnitude)
    if n == 0:
        return np.zeros((0, 5))
    ys, xs = np.nonzero(label >= 0)
    lab = label[ys, xs]
    out = np.empty((n, 5))
    out[:, 0] = ndimage.minimum(xs, lab, np.arange(n))
    out[:, 1] = ndimage.minimum(ys, lab, np.arange(n))
    out[:, 2] = ndimage.maximum(xs, lab, np.arange(n))
    out[:, 3] = ndimage.maximum(ys, lab, np.arange(n))
    out[:, 4] = np.bincount(lab, weights=b.magnitude[ys, xs], minlength=n)
    return out


# boxes --------------------------------------------------------------------------------

def box_sizes(width: int, height: int, params: ScoreParams = ScoreParams()) -> list[tuple[int, int]]:
    """(w, h) per (scale, aspect), coarse-to-fine; the shorter side is the scale."""
    sides = []
    k = 0
    while True:
        s = int(np.floor(params.min_side * params.scale_step ** k + 0.5))
        if s > max(width, height):
            break
        sides.append(s)
        k += 1
    sizes = []
    for s in reversed(sides):
        for a in params.aspects:
            if a >= 1:
                bw, bh = int(np.floor(s * a + 0.5)), s
            else:
                bw, bh = s, int(np.floor(s / a + 0.5))
            if bw <= width and bh <= height:
                sizes.append((bw, bh))
    return sizes


def generate_boxes(width: int, height: int, params: ScoreParams = ScoreParams()) -> np.ndarray:
    """Sliding-window boxes as an (n, 4) int array of (x, y, w, h), at most ``max_boxes``."""
    chunks, total = [], 0
    for bw, bh in box_sizes(width, height, params):
        sx = max(1, int(np.floor(params.stride_frac * bw + 0.5)))
        sy = max(1, int(np.floor(params.stride_frac * bh + 0.5)))
        xs = np.arange(0, width - bw + 1, sx)
        ys = np.arange(0, height - bh + 1, sy)
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        block = np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, bw), np.full(xx.size, bh)], axis=1)
        block = block[: params.max_boxes - total]
        chunks.append(block)
        total += len(block)
        if total >= params.max_boxes:
            break
    if not chunks:
        return np.zeros((0, 4), np.int64)
    return np.concatenate(chunks).astype(np.int64)


def score_box(box, groups, kappa: float = 1.5) -> float:
    """Enclosed contour magnitude over perimeter**kappa; enclosure is strict."""
    x, y, w, h = box
    total = 0.0
    for g in groups:
        x0, y0, x1, y1 = g.bbox if isinstance(g, EdgeGroup) else g[:4]
        if x0 > x and y0 > y and x1 < x + w - 1 and y1 < y + h - 1:
            total += g.magnitude if isinstance(g, EdgeGroup) else g[4]
    return total / (2.0 * (w + h)) ** kappa


def score_boxes(boxes: np.ndarray, table: np.ndarray, kappa: float = 1.5) -> np.ndarray:
    """Vectorised ``score_box`` over all boxes against a group table.

    For a fixed box size, enclosure factors into an x test and a y test, so the
    scores of all positions of that size are one (ny, G) x (G, nx) product.
    """
    boxes = np.asarray(boxes, dtype=np.int64)
    out = np.zeros(len(boxes))
    if len(table) == 0 or len(boxes) == 0:
        return out
    gx0, gy0, gx1, gy1, gm = (table[:, i] for i in range(5))
    sizes, inv = np.unique(boxes[:, 2:4], axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    for k, (bw, bh) in enumerate(sizes):
        idx = np.nonzero(inv == k)[0]
        ux, xi = np.unique(boxes[idx, 0], return_inverse=True)
        uy, yi = np.unique(boxes[idx, 1], return_inverse=True)
        in_x = (gx0[:, None] > ux) & (gx1[:, None] < ux + bw - 1)
        in_y = (gy0[:, None] > uy) & (gy1[:, None] < uy + bh - 1)
        grid = (in_y * gm[:, None]).T @ in_x.astype(np.float64)
        out[idx] = grid[yi.reshape(-1), xi.reshape(-1)]
    perim = 2.0 * (boxes[:, 2] + boxes[:, 3]).astype(np.float64)
    return out / perim ** kappa


def fuse_scores(s_obj, s_motion, alpha: float = 1.0, beta: float = 1.0):
    return alpha * np.asarray(s_obj, dtype=np.float64) + beta * np.asarray(s_motion, dtype=np.float64)


def rank_boxes(boxes: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Order by score descending, ties by (y, x, w, h) ascending."""
    boxes = np.asarray(boxes)
    return np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 0], boxes[:, 1], -np.asarray(scores)))


@dataclass
class FrameScores:
    """Per-box raw and normalised scores for one frame (before ranking)."""

    boxes: np.ndarray
    raw_obj: np.ndarray
    raw_motion: np.ndarray
    s_obj: np.ndarray = field(init=False)
    s_motion: np.ndarray = field(init=False)

    def __post_init__(self):
        self.s_obj = _normalized(self.raw_obj)
        self.s_motion = _normalized(self.raw_motion)

    def fused(self, alpha: float, beta: float) -> np.ndarray:
        return fuse_scores(self.s_obj, self.s_motion, alpha, beta)

    def ranked(self, alpha: float, beta: float) -> list[ProposalBox]:
        fused = self.fused(alpha, beta)
        order = rank_boxes(self.boxes, fused)
        return [
            ProposalBox(*map(int, self.boxes[i]), float(self.s_obj[i]), float(self.s_motion[i]), float(fused[i]))
            for i in order
        ]

    def top_boxes(self, alpha: float, beta: float, n: int) -> np.ndarray:
        """Up to ``n`` best boxes with a positive fused score, as an (k, 4) array."""
        fused = self.fused(alpha, beta)
        order = rank_boxes(self.boxes, fused)[:n]
        order = order[fused[order] > 0]
        return self.boxes[order]


def frame_scores(frame, flow, params: ScoreParams = ScoreParams(), boxes=None) -> FrameScores:
    gray = frame.gray() if hasattr(frame, "gray") else np.asarray(frame)
    h, w = gray.shape
    if boxes is None:
        boxes = generate_boxes(w, h, params)
    obj = score_boxes(boxes, group_table_fast(image_boundaries(gray), params), params.kappa)
    if flow is not None:
        motion = score_boxes(boxes, group_table_fast(motion_boundaries(flow), params), params.kappa)
    else:
        motion = np.zeros(len(boxes))
    return FrameScores(boxes, obj, motion)


def score_frame(frame, flow, params: ScoreParams = ScoreParams()) -> list[ProposalBox]:
    """All generated boxes with object, motion and fused scores, best first.

    Object and motion scores are each divided by their maximum over the frame.
    """
    if flow is None and params.beta > 0:
        raise ValueError("motion scoring needs a flow field when beta > 0")
    return frame_scores(frame, flow, params).ranked(params.alpha, params.beta)
