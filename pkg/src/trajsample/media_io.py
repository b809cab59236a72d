"""Frame/annotation loading and the binary cache formats.

All binary caches are little-endian and start with a 4-byte ASCII magic:

    FLO1  u32 width, u32 height, then (u, v) f32 pairs row-major
    SAL1  u32 width, u32 height, then f32 values row-major
    TRJ1  u32 count, then per record: u32 start_frame, f32 x, f32 y,
          u32 scale_index, 15 x (f32 dx, f32 dy)
    DSC1  u32 count, u32 dim, then f32 vectors

Box files are CSV rows ``frame,x,y,w,h,score``.
"""

from __future__ import annotations

import csv
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import TRAJ_LEN


class FormatError(ValueError):
    """Malformed input file."""


@dataclass
class Frame:
    data: np.ndarray  # (h, w) or (h, w, 3), uint8
    index: int = 0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.data.ndim not in (2, 3) or (self.data.ndim == 3 and self.data.shape[2] != 3):
            raise ValueError(f"frame data must be (h, w) or (h, w, 3), got {self.data.shape}")
        if self.width < 1 or self.height < 1:
            raise ValueError("frame must be at least 1x1")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def gray(self) -> np.ndarray:
        """Luma as uint8; color frames use 0.299R + 0.587G + 0.114B rounded."""
        if self.channels == 1:
            return self.data
        rgb = self.data.astype(np.float64)
        luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class AnnotationBox:
    frame_index: int
    x: int
    y: int
    w: int
    h: int

    def contains(self, px: int, py: int) -> bool:
        return self.x <= px <= self.x + self.w - 1 and self.y <= py <= self.y + self.h - 1


_FRAME_RE = re.compile(r"^frame_(\d{6})\.(pgm|ppm)$")


def load_sequence(dir_path) -> list[Frame]:
    """Load ``frame_%06d.pgm``/``.ppm`` files, consecutive from 000000."""
    dir_path = Path(dir_path)
    found = {}
    for name in os.listdir(dir_path):
        m = _FRAME_RE.match(name)
        if m:
            idx = int(m.group(1))
            if idx in found:
                raise FormatError(f"duplicate frame {idx:06d} in {dir_path}")
            found[idx] = dir_path / name
    frames = []
    for idx in range(len(found)):
        if idx not in found:
            raise FormatError(f"missing frame {idx:06d}")
        with Image.open(found[idx]) as im:
            if im.mode not in ("L", "RGB"):
                raise FormatError(f"frame {idx:06d}: unsupported mode {im.mode}")
            data = np.asarray(im, dtype=np.uint8)
        frame = Frame(data, idx)
        if frames and (frame.data.shape != frames[0].data.shape):
            raise FormatError(
                f"frame {idx:06d}: dimensions {frame.width}x{frame.height}x{frame.channels} differ "
                f"from frame 000000 ({frames[0].width}x{frames[0].height}x{frames[0].channels})"
            )
        frames.append(frame)
    return frames


def save_frame(path, frame: Frame) -> None:
    Image.fromarray(frame.data).save(path)


def save_sequence(dir_path, frames) -> None:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        ext = "pgm" if f.channels == 1 else "ppm"
        save_frame(dir_path / f"frame_{i:06d}.{ext}", f)


def _parse_int(text: str, lineno: int, path) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise FormatError(f"{path}:{lineno}: non-integer field {text.strip()!r}") from None


def load_annotations(csv_path, width: int | None = None, height: int | None = None) -> list[AnnotationBox]:
    """Parse ``frame,x,y,w,h`` rows; boxes are clipped when the frame size is given.

    Boxes that fall entirely outside the frame are dropped.
    """
    boxes = []
    with open(csv_path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip().lower() == "frame":
                continue
            if len(row) < 5:
                raise FormatError(f"{csv_path}:{lineno}: expected 5 fields, got {len(row)}")
            fi, x, y, w, h = (_parse_int(c, lineno, csv_path) for c in row[:5])
            x0, y0, x1, y1 = x, y, x + w, y + h
            if width is not None:
                x0, x1 = max(x0, 0), min(x1, width)
            if height is not None:
                y0, y1 = max(y0, 0), min(y1, height)
            if x1 - x0 < 1 or y1 - y0 < 1:
                continue
            boxes.append(AnnotationBox(fi, x0, y0, x1 - x0, y1 - y0))
    return boxes


def write_annotations(csv_path, boxes) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "x", "y", "w", "h"])
        for b in boxes:
            w.writerow([b.frame_index, b.x, b.y, b.w, b.h])


# binary helpers ------------------------------------------------------------

def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"unexpected end of {what} data")
    return buf


def _check_magic(fh, magic: bytes, what: str) -> None:
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"bad {what} magic {got!r}, expected {magic!r}")


def write_flow(path, flow) -> None:
    h, w = flow.u.shape
    inter = np.empty((h, w, 2), dtype="<f4")
    inter[..., 0] = flow.u
    inter[..., 1] = flow.v
    with open(path, "wb") as fh:
        fh.write(b"FLO1" + struct.pack("<II", w, h))
        fh.write(inter.tobytes())


def read_flow(path):
    from .flow import FlowField

    with open(path, "rb") as fh:
        _check_magic(fh, b"FLO1", "flow")
        w, h = struct.unpack("<II", _read_exact(fh, 8, "flow"))
        raw = _read_exact(fh, w * h * 8, "flow")
    arr = np.frombuffer(raw, dtype="<f4").reshape(h, w, 2)
    return FlowField(arr[..., 0].astype(np.float32), arr[..., 1].astype(np.float32))


def write_saliency(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(b"SAL1" + struct.pack("<II", w, h))
        fh.write(values.astype("<f4").tobytes())


def read_saliency(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _check_magic(fh, b"SAL1", "saliency")
        w, h = struct.unpack("<II", _read_exact(fh, 8, "saliency"))
        raw = _read_exact(fh, w * h * 4, "saliency")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float32)


TRAJ_RECORD = np.dtype(
    [
        ("start_frame", "<u4"),
        ("x", "<f4"),
        ("y", "<f4"),
        ("scale", "<u4"),
        ("disp", "<f4", (TRAJ_LEN, 2)),
    ]
)


def write_trajectories(path, trajs) -> None:
    rec = np.empty(len(trajs), dtype=TRAJ_RECORD)
    rec["start_frame"] = trajs.start_frame
    rec["x"] = trajs.start_xy[:, 0]
    rec["y"] = trajs.start_xy[:, 1]
    rec["scale"] = trajs.scale
    rec["disp"] = trajs.disp
    with open(path, "wb") as fh:
        fh.write(b"TRJ1" + struct.pack("<I", len(rec)))
        fh.write(rec.tobytes())


def read_trajectories(path):
    from .trajectories import TrajectorySet

    with open(path, "rb") as fh:
        _check_magic(fh, b"TRJ1", "trajectory")
        (n,) = struct.unpack("<I", _read_exact(fh, 4, "trajectory"))
        raw = _read_exact(fh, n * TRAJ_RECORD.itemsize, "trajectory")
    rec = np.frombuffer(raw, dtype=TRAJ_RECORD)
    return TrajectorySet(
        start_frame=rec["start_frame"].astype(np.int64),
        start_xy=np.stack([rec["x"], rec["y"]], axis=1).astype(np.float32),
        scale=rec["scale"].astype(np.int64),
        disp=rec["disp"].astype(np.float32),
    )


def write_descriptors(path, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors)
    if vectors.ndim != 2:
        raise ValueError("descriptor matrix must be 2-D")
    n, dim = vectors.shape
    with open(path, "wb") as fh:
        fh.write(b"DSC1" + struct.pack("<II", n, dim))
        fh.write(vectors.astype("<f4").tobytes())


def read_descriptors(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _check_magic(fh, b"DSC1", "descriptor")
        n, dim = struct.unpack("<II", _read_exact(fh, 8, "descriptor"))
        raw = _read_exact(fh, n * dim * 4, "descriptor")
    return np.frombuffer(raw, dtype="<f4").reshape(n, dim).astype(np.float32)


@dataclass(frozen=True)
class BoxRecord:
    frame: int
    x: int
    y: int
    w: int
    h: int
    score: float = field(compare=True)


def write_boxes(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "x", "y", "w", "h", "score"])
        for r in records:
            w.writerow([r.frame, r.x, r.y, r.w, r.h, repr(float(r.score))])


def read_boxes(path) -> list[BoxRecord]:
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and row[0].strip().lower() == "frame":
                continue
            if len(row) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 fields")
            ints = [_parse_int(c, lineno, path) for c in row[:5]]
            try:
                score = float(row[5])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad score {row[5]!r}") from None
            out.append(BoxRecord(*ints, score))
    return out
