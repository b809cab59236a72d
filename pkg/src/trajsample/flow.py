"""Dense two-frame optical flow by polynomial expansion (Farnebäck).

Each frame is locally approximated by a quadratic polynomial fitted under a
Gaussian applicability window.  Displacement is estimated from the change of
the linear coefficient between the two expansions, aggregated over a box
window, and refined coarse-to-fine over an image pyramid.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

_BORDER = cv2.BORDER_REPLICATE


@dataclass
class FlowField:
    u: np.ndarray  # (h, w) float32, horizontal displacement in px
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("u and v must be 2-D arrays of equal shape")

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width), np.float32), np.zeros((height, width), np.float32))

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v)


@dataclass(frozen=True)
class FlowParams:
    pyr_scale: float = 0.5
    levels: int = 3
    winsize: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1


def _expansion_kernels(n: int, sigma: float) -> list[np.ndarray]:
    """Correlation kernels giving (c, bx, by, axx, ayy, axy) per pixel."""
    r = np.arange(-n, n + 1, dtype=np.float64)
    yy, xx = np.meshgrid(r, r, indexing="ij")
    x, y = xx.ravel(), yy.ravel()
    basis = np.stack([np.ones_like(x), x, y, x * x, y * y, x * y], axis=1)
    weight = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    bw = basis * weight[:, None]
    proj = np.linalg.solve(basis.T @ bw, bw.T)  # (6, m)
    side = 2 * n + 1
    return [proj[j].reshape(side, side) for j in range(6)]


def poly_expansion(img: np.ndarray, n: int = 5, sigma: float = 1.1) -> np.ndarray:
    """Return (h, w, 5) array of (bx, by, axx, ayy, axy) coefficients."""
    img = np.asarray(img, dtype=np.float64)
    kernels = _expansion_kernels(n, sigma)[1:]
    return np.stack(
        [cv2.filter2D(img, cv2.CV_64F, k, borderType=_BORDER) for k in kernels], axis=-1
    )


def _warp(arr: np.ndarray, map_x: np.ndarray, map_y: np.ndarray) -> np.ndarray:
    out = np.empty_like(arr)
    for c in range(arr.shape[2]):
        out[..., c] = cv2.remap(
            arr[..., c], map_x, map_y, interpolation=cv2.INTER_LINEAR, borderMode=_BORDER
        )
    return out


def _refine(r0: np.ndarray, r1: np.ndarray, du: np.ndarray, dv: np.ndarray, winsize: int):
    h, w = du.shape
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    # remap needs float32 maps; coefficient planes stay float64
    r1w = _warp(r1, (gx + du).astype(np.float32), (gy + dv).astype(np.float32))

    a11 = 0.5 * (r0[..., 2] + r1w[..., 2])
    a22 = 0.5 * (r0[..., 3] + r1w[..., 3])
    a12 = 0.25 * (r0[..., 4] + r1w[..., 4])
    db1 = 0.5 * (r0[..., 0] - r1w[..., 0]) + a11 * du + a12 * dv
    db2 = 0.5 * (r0[..., 1] - r1w[..., 1]) + a12 * du + a22 * dv

    m = np.stack(
        [
            a11 * a11 + a12 * a12,
            a12 * (a11 + a22),
            a22 * a22 + a12 * a12,
            a11 * db1 + a12 * db2,
            a12 * db1 + a22 * db2,
        ],
        axis=-1,
    )
    g11, g12, g22, h1, h2 = (cv2.blur(m[..., c], (winsize, winsize), borderType=_BORDER) for c in range(5))
    idet = 1.0 / (g11 * g22 - g12 * g12 + 1e-3)
    return (g22 * h1 - g12 * h2) * idet, (g11 * h2 - g12 * h1) * idet


def compute_flow(prev, next, params: FlowParams = FlowParams()) -> FlowField:
    """Flow from ``prev`` to ``next``: a point at x in prev moves to x + (u, v)."""
    a = _as_gray(prev)
    b = _as_gray(next)
    if a.shape != b.shape:
        raise ValueError(f"frame dimensions differ: {a.shape[::-1]} vs {b.shape[::-1]}")
    h, w = a.shape

    du = dv = None
    for level in range(params.levels - 1, -1, -1):
        scale = params.pyr_scale ** level
        lw, lh = int(round(w * scale)), int(round(h * scale))
        if min(lw, lh) < 2 * params.poly_n + 1 and level > 0:
            continue
        la, lb = _pyr_level(a, scale, lw, lh), _pyr_level(b, scale, lw, lh)
        r0 = poly_expansion(la, params.poly_n, params.poly_sigma)
        r1 = poly_expansion(lb, params.poly_n, params.poly_sigma)
        if du is None:
            du = np.zeros((lh, lw))
            dv = np.zeros((lh, lw))
        else:
            ph, pw = du.shape
            du = cv2.resize(du, (lw, lh), interpolation=cv2.INTER_LINEAR) * (lw / pw)
            dv = cv2.resize(dv, (lw, lh), interpolation=cv2.INTER_LINEAR) * (lh / ph)
        for _ in range(params.iterations):
            du, dv = _refine(r0, r1, du, dv, params.winsize)
    return FlowField(du.astype(np.float32), dv.astype(np.float32))


def _as_gray(frame) -> np.ndarray:
    if hasattr(frame, "gray"):
        return frame.gray().astype(np.float64)
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a grayscale frame")
    return arr


def _pyr_level(img: np.ndarray, scale: float, lw: int, lh: int) -> np.ndarray:
    if scale == 1.0:
        return img
    sigma = (1.0 / scale - 1.0) * 0.5
    blurred = cv2.GaussianBlur(img, (0, 0), sigma, borderType=_BORDER)
    return cv2.resize(blurred, (lw, lh), interpolation=cv2.INTER_LINEAR)


def median_filter_flow(f: FlowField, radius: int = 1) -> FlowField:
    if radius < 1:
        raise ValueError("radius must be >= 1")
    size = 2 * radius + 1
    return FlowField(
        ndimage.median_filter(f.u, size=size, mode="nearest"),
        ndimage.median_filter(f.v, size=size, mode="nearest"),
    )


def resize_flow(f: FlowField, width: int, height: int) -> FlowField:
    """Bilinear resample to (width, height), rescaling vectors to the new pixel grid."""
    if (width, height) == (f.width, f.height):
        return f
    u = cv2.resize(f.u, (width, height), interpolation=cv2.INTER_LINEAR) * np.float32(width / f.width)
    v = cv2.resize(f.v, (width, height), interpolation=cv2.INTER_LINEAR) * np.float32(height / f.height)
    return FlowField(u, v)
