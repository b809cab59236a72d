"""Desk-scale synthetic action corpus.

Each video shows a textured 24x24 square moving right, up or diagonally at
2 px/frame over a static cluttered scene with high-contrast checkerboard
distractors.  A hand-held camera shake, independent of the class, moves the
whole view so that background points form trajectories too (as they do in
real footage without camera-motion compensation).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .media_io import AnnotationBox, Frame, save_sequence, write_annotations

CLASSES = {"right": (2.0, 0.0), "up": (0.0, -2.0), "diagonal": (2.0, -2.0)}


@dataclass(frozen=True)
class SynthParams:
    videos_per_class: int = 20
    n_frames: int = 30
    size: int = 128
    square: int = 24
    margin: int = 12
    shake_amplitude: tuple = (3.0, 3.0)  # per-video range, px
    shake_period: tuple = (20.0, 30.0)
    n_distractors: int = 3
    distractor_size: int = 22
    checker: int = 8
    noise_sigma: float = 1.0
    outline: int = 2
    outline_value: float = 245.0
    n_splits: int = 3


def _texture(rng, shape, sigma, lo, hi):
    t = ndimage.gaussian_filter(rng.normal(size=shape), sigma, mode="wrap")
    t = (t - t.min()) / (t.max() - t.min() + 1e-12)
    return lo + (hi - lo) * t


def _checkerboard(size, cell, phase):
    yy, xx = np.mgrid[0:size, 0:size]
    return np.where(((xx // cell + yy // cell + phase) % 2) == 0, 15.0, 240.0)


def _render_video(rng, label, p: SynthParams):
    world = p.size + 2 * p.margin
    bg = _texture(rng, (world, world), 2.0, 70.0, 150.0)
    placed = []
    for _ in range(p.n_distractors):
        for _attempt in range(50):
            x = int(rng.integers(p.margin, p.margin + p.size - p.distractor_size))
            y = int(rng.integers(p.margin, p.margin + p.size - p.distractor_size))
            if all(abs(x - a) > p.distractor_size + 4 or abs(y - b) > p.distractor_size + 4 for a, b in placed):
                break
        placed.append((x, y))
        d = p.distractor_size
        bg[y: y + d, x: x + d] = _checkerboard(d, p.checker, int(rng.integers(2)))
    sq_tex = _texture(rng, (p.square, p.square), 1.5, 40.0, 220.0)
    if p.outline:
        o = p.outline
        sq_tex[:o], sq_tex[-o:], sq_tex[:, :o], sq_tex[:, -o:] = (p.outline_value,) * 4

    vx, vy = CLASSES[label]
    travel = 2 * (p.n_frames - 1)
    lo, hi = 4, 16
    x0 = rng.uniform(lo, hi) if vx > 0 else rng.uniform(20, p.size - p.square - 20)
    y0 = rng.uniform(p.size - p.square - hi, p.size - p.square - lo) if vy < 0 else rng.uniform(20, p.size - p.square - 20)
    x0, y0 = float(np.floor(x0)), float(np.floor(y0))
    assert x0 + vx * (p.n_frames - 1) + p.square <= p.size and y0 + vy * (p.n_frames - 1) >= 0, travel

    period = rng.uniform(*p.shake_period)
    amplitude = rng.uniform(*p.shake_amplitude)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    direction = rng.uniform(0, np.pi)
    amp = amplitude * np.array([np.cos(direction), np.sin(direction)])
    amp2 = 0.5 * amplitude * np.array([-np.sin(direction), np.cos(direction)])

    frames, boxes, cams = [], [], []
    for t in range(p.n_frames):
        canvas = bg.copy()
        sx, sy = int(x0 + vx * t) + p.margin, int(y0 + vy * t) + p.margin
        canvas[sy: sy + p.square, sx: sx + p.square] = sq_tex
        cam = amp * np.sin(2 * np.pi * t / period + phase[0]) + amp2 * np.sin(2 * np.pi * t / period + phase[1])
        cams.append(cam.tolist())
        # view pixel (x, y) shows world point (x + margin + cam_x, y + margin + cam_y)
        m = np.float32([[1, 0, p.margin + cam[0]], [0, 1, p.margin + cam[1]]])
        view = cv2.warpAffine(canvas, m, (p.size, p.size),
                              flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP, borderMode=cv2.BORDER_REFLECT)
        view = view + rng.normal(0, p.noise_sigma, view.shape)
        frames.append(Frame(np.clip(np.floor(view + 0.5), 0, 255).astype(np.uint8), t))
        bx = int(np.floor(sx - p.margin - cam[0] + 0.5))
        by = int(np.floor(sy - p.margin - cam[1] + 0.5))
        x_a, y_a = max(bx, 0), max(by, 0)
        x_b, y_b = min(bx + p.square, p.size), min(by + p.square, p.size)
        if x_b > x_a and y_b > y_a:
            boxes.append(AnnotationBox(t, x_a, y_a, x_b - x_a, y_b - y_a))
    meta = {"label": label, "square_velocity": [vx, vy], "square_start": [x0, y0],
            "camera": cams, "distractors": [[x - p.margin, y - p.margin] for x, y in placed]}
    return frames, boxes, meta


def make_synthetic_corpus(out_dir, seed: int = 0, params: SynthParams = SynthParams()) -> dict:
    """Write videos, annotations, labels and fold files under ``out_dir``.

    Returns a manifest ``{"videos": [...], "labels": {...}, "splits": [...]}``.
    """
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(exist_ok=True)
    (out / "splits").mkdir(exist_ok=True)
    root = np.random.SeedSequence(seed)
    labels, metas = {}, {}
    videos = []
    children = root.spawn(len(CLASSES) * params.videos_per_class)
    for ci, label in enumerate(CLASSES):
        for i in range(params.videos_per_class):
            vid = f"{label}_{i:02d}"
            rng = np.random.default_rng(children[ci * params.videos_per_class + i])
            frames, boxes, meta = _render_video(rng, label, params)
            save_sequence(out / "videos" / vid, frames)
            write_annotations(out / "annotations" / f"{vid}.csv", boxes)
            labels[vid] = label
            metas[vid] = meta
            videos.append(vid)
    with open(out / "labels.csv", "w") as fh:
        fh.write("video,label\n")
        for vid in videos:
            fh.write(f"{vid},{labels[vid]}\n")
    splits = []
    for k in range(params.n_splits):
        test = [v for v in videos if int(v.rsplit("_", 1)[1]) % params.n_splits == k]
        train = [v for v in videos if v not in test]
        (out / "splits" / f"train_{k + 1}.txt").write_text("\n".join(train) + "\n")
        (out / "splits" / f"test_{k + 1}.txt").write_text("\n".join(test) + "\n")
        splits.append({"train": train, "test": test})
    with open(out / "meta.json", "w") as fh:
        json.dump({"seed": seed, "params": asdict(params), "videos": metas}, fh, indent=1, sort_keys=True)
    return {"videos": videos, "labels": labels, "splits": splits}
