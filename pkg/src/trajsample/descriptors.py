"""HOG / HOF / MBH descriptors in the 32x32x15 volume around each trajectory.

Per-pixel orientation histograms are built once per (scale, frame) and summed
over cells with integral images, so every trajectory alive at a frame is
handled in a single vectorised lookup.  Cell order in the output vectors is
(temporal cell, row, column, bin).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import TRAJ_LEN
from .flow import resize_flow
from .trajectories import ScalePyramid, TrackParams, round_half_up, shape_descriptors


@dataclass(frozen=True)
class VolumeConfig:
    patch: int = 32
    length: int = TRAJ_LEN
    n_xy: int = 2
    n_t: int = 3
    hog_bins: int = 8
    hof_bins: int = 9  # 8 orientations + zero-motion bin
    mbh_bins: int = 8
    zero_flow: float = 0.4

    @property
    def cell(self) -> int:
        return self.patch // self.n_xy

    @property
    def t_cell(self) -> int:
        return self.length // self.n_t

    def dim(self, bins: int) -> int:
        return self.n_xy * self.n_xy * self.n_t * bins


def gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centred [-1, 0, 1] differences with edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    k = np.array([-1.0, 0.0, 1.0])
    return (ndimage.correlate1d(img, k, axis=-1, mode="nearest"),
            ndimage.correlate1d(img, k, axis=-2, mode="nearest"))


def orientation_hist(dx: np.ndarray, dy: np.ndarray, nbins: int = 8) -> np.ndarray:
    """Magnitude-weighted signed-orientation histogram per pixel, linear bin interpolation.

    Bin k is centred at k * 360/nbins degrees.
    """
    mag = np.hypot(dx, dy)
    ang = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    fbin = ang * (nbins / (2 * np.pi))
    b0 = np.floor(fbin)
    frac = fbin - b0
    b0 = b0.astype(np.int64) % nbins
    b1 = (b0 + 1) % nbins
    out = np.zeros(mag.shape + (nbins,))
    np.put_along_axis(out, b0[..., None], (mag * (1 - frac))[..., None], axis=-1)
    # b0 != b1 always, so this adds into a different slot
    np.put_along_axis(out, b1[..., None], (mag * frac)[..., None], axis=-1)
    return out


def flow_hist(u: np.ndarray, v: np.ndarray, nbins: int = 9, zero_flow: float = 0.4) -> np.ndarray:
    """Orientation histogram of flow vectors; last bin counts near-zero motion with weight 1."""
    out = np.zeros(np.shape(u) + (nbins,))
    out[..., : nbins - 1] = orientation_hist(u, v, nbins - 1)
    still = np.hypot(u, v) < zero_flow
    out[still] = 0.0
    out[still, nbins - 1] = 1.0
    return out


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def _pool_volume(per_pixel: np.ndarray, cfg: VolumeConfig) -> np.ndarray:
    """Sum a (T, P, P, bins) per-pixel histogram volume into cells."""
    t, p, _, bins = per_pixel.shape
    c, tc = cfg.cell, cfg.t_cell
    cells = per_pixel[: cfg.n_t * tc].reshape(cfg.n_t, tc, cfg.n_xy, c, cfg.n_xy, c, bins)
    return l2_normalize(cells.sum(axis=(1, 3, 5)).ravel())


def _check_volume(vol, cfg, trailing=()):
    vol = np.asarray(vol, dtype=np.float64)
    want = (cfg.length, cfg.patch, cfg.patch) + trailing
    if vol.shape != want:
        raise ValueError(f"volume must have shape {want}, got {vol.shape}")
    return vol


def hog(volume, cfg: VolumeConfig = VolumeConfig()) -> np.ndarray:
    """HOG of a (15, 32, 32) intensity volume."""
    vol = _check_volume(volume, cfg)
    hists = np.stack([orientation_hist(*gradient(f), cfg.hog_bins) for f in vol])
    return _pool_volume(hists, cfg)


def hof(flow_volume, cfg: VolumeConfig = VolumeConfig()) -> np.ndarray:
    """HOF of a (15, 32, 32, 2) flow volume."""
    vol = _check_volume(flow_volume, cfg, (2,))
    hists = flow_hist(vol[..., 0], vol[..., 1], cfg.hof_bins, cfg.zero_flow)
    return _pool_volume(hists, cfg)


def mbh(flow_volume, cfg: VolumeConfig = VolumeConfig()) -> tuple[np.ndarray, np.ndarray]:
    """(MBHx, MBHy): HOG of the u and v flow channels of a (15, 32, 32, 2) volume."""
    vol = _check_volume(flow_volume, cfg, (2,))
    hx = np.stack([orientation_hist(*gradient(f[..., 0]), cfg.mbh_bins) for f in vol])
    hy = np.stack([orientation_hist(*gradient(f[..., 1]), cfg.mbh_bins) for f in vol])
    return _pool_volume(hx, cfg), _pool_volume(hy, cfg)


# batch extraction -----------------------------------------------------------

def _integral(per_pixel: np.ndarray, pad: int) -> np.ndarray:
    padded = np.pad(per_pixel, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    out = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1, padded.shape[2]))
    np.cumsum(np.cumsum(padded, axis=0), axis=1, out=out[1:, 1:])
    return out


def _cell_sums(ii: np.ndarray, x0: np.ndarray, y0: np.ndarray, size: int) -> np.ndarray:
    x1, y1 = x0 + size, y0 + size
    return ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]


def frame_histograms(gray_s: np.ndarray, u_s: np.ndarray, v_s: np.ndarray,
                     cfg: VolumeConfig) -> dict[str, np.ndarray]:
    """Per-pixel histograms for one (scale, frame)."""
    return {
        "hog": orientation_hist(*gradient(gray_s), cfg.hog_bins),
        "hof": flow_hist(u_s, v_s, cfg.hof_bins, cfg.zero_flow),
        "mbhx": orientation_hist(*gradient(u_s), cfg.mbh_bins),
        "mbhy": orientation_hist(*gradient(v_s), cfg.mbh_bins),
    }


def compute_descriptors(frames, flows, trajs, cfg: VolumeConfig = VolumeConfig(),
                        track_params: TrackParams = TrackParams()) -> dict[str, np.ndarray]:
    """All five descriptor blocks for ``trajs``; returns {type: (n, dim) float32}.

    ``flows[t]`` is the flow from frame t to t+1.  Windows that cross the frame
    border read edge-replicated histograms.
    """
    grays = [f.gray() if hasattr(f, "gray") else np.asarray(f) for f in frames]
    h, w = grays[0].shape
    pyramid = ScalePyramid.from_params(w, h, track_params)
    n = len(trajs)
    bins = {"hog": cfg.hog_bins, "hof": cfg.hof_bins, "mbhx": cfg.mbh_bins, "mbhy": cfg.mbh_bins}
    acc = {k: np.zeros((n, cfg.n_t, cfg.n_xy, cfg.n_xy, b)) for k, b in bins.items()}
    out = {"shape": shape_descriptors(trajs).astype(np.float32) if n else np.zeros((0, 30), np.float32)}
    if n == 0:
        for k, b in bins.items():
            out[k] = np.zeros((0, cfg.dim(b)), np.float32)
        return out

    pos = trajs.positions()
    half, c = cfg.patch // 2, cfg.cell
    first, last = int(trajs.start_frame.min()), int(trajs.start_frame.max()) + cfg.length - 1
    for t in range(first, last + 1):
        k = t - trajs.start_frame
        alive = (k >= 0) & (k < cfg.length)
        for s in np.unique(trajs.scale[alive]):
            sel = np.nonzero(alive & (trajs.scale == s))[0]
            ws, hs = pyramid.sizes[s]
            rx, ry = pyramid.ratio(s)
            fl = resize_flow(flows[t], ws, hs)
            hists = frame_histograms(pyramid.resize(grays[t], s), fl.u, fl.v, cfg)
            ks = k[sel]
            px = np.clip(round_half_up(pos[sel, ks, 0] * rx), 0, ws - 1)
            py = np.clip(round_half_up(pos[sel, ks, 1] * ry), 0, hs - 1)
            # window [p - half, p + half) is [p, p + patch) in padded coordinates
            x0, y0 = px, py
            tc = ks // cfg.t_cell
            for name, per_pixel in hists.items():
                ii = _integral(per_pixel, half)
                for cy in range(cfg.n_xy):
                    for cx in range(cfg.n_xy):
                        acc[name][sel, tc, cy, cx] += _cell_sums(ii, x0 + cx * c, y0 + cy * c, c)
    for name, a in acc.items():
        out[name] = l2_normalize(a.reshape(n, -1)).astype(np.float32)
    return out


def extract_volume(frames_or_planes, positions, pad_mode="edge", patch=32):
    """Cut a (T, patch, patch, ...) volume centred on rounded ``positions``.

    Reference helper for tests and the single-volume descriptor functions.
    """
    half = patch // 2
    out = []
    for plane, (x, y) in zip(frames_or_planes, positions):
        plane = np.asarray(plane, dtype=np.float64)
        widths = ((half, half), (half, half)) + ((0, 0),) * (plane.ndim - 2)
        padded = np.pad(plane, widths, mode=pad_mode)
        ix, iy = int(round_half_up(x)), int(round_half_up(y))
        out.append(padded[iy: iy + patch, ix: ix + patch])
    return np.stack(out)
