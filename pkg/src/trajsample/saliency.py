"""Saliency maps from proposal votes, and the trajectory sampling strategies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trajectories import TrajectorySet, round_half_up

STRATEGIES = ("dense", "random", "edgebox", "fusionedgebox", "gt")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of the SplitMix64 generator seeded with ``seed``."""
    with np.errstate(over="ignore"):
        state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        z = state
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def uniform01(seed: int, n: int) -> np.ndarray:
    """Doubles in [0, 1) from the top 53 bits of each SplitMix64 output."""
    return (splitmix64(seed, n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass
class SaliencyMap:
    values: np.ndarray  # (h, w) float32 in [0, 1]
    frame_index: int = 0

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SamplingDecision:
    strategy: str
    sigma: float | None = None
    rate: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        saliency = self.strategy in ("edgebox", "fusionedgebox")
        if saliency != (self.sigma is not None):
            raise ValueError(f"sigma is required for exactly the saliency strategies, got {self}")
        if (self.strategy == "random") != (self.rate is not None and self.seed is not None):
            raise ValueError(f"rate and seed are required for exactly the random strategy, got {self}")
        if self.sigma is not None and not 0 <= self.sigma <= 1:
            raise ValueError("sigma must lie in [0, 1]")
        if self.rate is not None and not 0 <= self.rate <= 1:
            raise ValueError("rate must lie in [0, 1]")


def build_saliency(boxes, width: int, height: int, frame_index: int = 0,
                   weights=None) -> SaliencyMap:
    """Each box votes for every pixel inside it; counts are divided by the maximum.

    ``boxes`` is any sequence of (x, y, w, h); ``weights`` switches to
    score-weighted votes.
    """
    diff = np.zeros((height + 1, width + 1))
    boxes = [(b.x, b.y, b.w, b.h) if hasattr(b, "x") else tuple(b) for b in boxes]
    weighted = weights is not None
    if not weighted:
        weights = np.ones(len(boxes))
    for (x, y, w, h), wt in zip(boxes, weights):
        x0, y0 = max(int(x), 0), max(int(y), 0)
        x1, y1 = min(int(x) + int(w), width), min(int(y) + int(h), height)
        if x1 <= x0 or y1 <= y0:
            continue
        diff[y0, x0] += wt
        diff[y0, x1] -= wt
        diff[y1, x0] -= wt
        diff[y1, x1] += wt
    votes = diff.cumsum(0).cumsum(1)[:height, :width]
    if weighted:
        votes[np.abs(votes) < 1e-12] = 0.0
    m = votes.max() if votes.size else 0.0
    values = votes / m if m > 0 else np.zeros_like(votes)
    return SaliencyMap(np.clip(values, 0.0, 1.0).astype(np.float32), frame_index)


def start_saliency(trajs: TrajectorySet, maps) -> np.ndarray:
    """Saliency at each trajectory's start pixel; ``maps`` is indexable by frame."""
    out = np.empty(len(trajs))
    if len(trajs) == 0:
        return out
    for f in np.unique(trajs.start_frame):
        try:
            m = maps[int(f)]
        except (KeyError, IndexError):
            m = None
        if m is None:
            raise KeyError(f"no saliency map for frame {int(f)}")
        vals = m.values if isinstance(m, SaliencyMap) else np.asarray(m)
        sel = trajs.start_frame == f
        x = np.clip(round_half_up(trajs.start_xy[sel, 0]), 0, vals.shape[1] - 1)
        y = np.clip(round_half_up(trajs.start_xy[sel, 1]), 0, vals.shape[0] - 1)
        out[sel] = vals[y, x]
    return out


def saliency_mask(trajs, maps, sigma: float) -> np.ndarray:
    return start_saliency(trajs, maps) >= sigma


def sample_saliency(trajs: TrajectorySet, maps, sigma: float) -> TrajectorySet:
    """Keep trajectories whose start-pixel saliency is at least ``sigma``."""
    return trajs[saliency_mask(trajs, maps, sigma)]


def random_mask(n: int, rate: float, seed: int) -> np.ndarray:
    if not 0 <= rate <= 1:
        raise ValueError("rate must lie in [0, 1]")
    return uniform01(seed, n) < rate


def sample_random(trajs: TrajectorySet, rate: float, seed: int) -> TrajectorySet:
    """Independent Bernoulli(rate) keep/drop per trajectory, SplitMix64-seeded."""
    return trajs[random_mask(len(trajs), rate, seed)]


def gt_mask(trajs: TrajectorySet, annotations) -> np.ndarray:
    keep = np.zeros(len(trajs), bool)
    if len(trajs) == 0:
        return keep
    x = round_half_up(trajs.start_xy[:, 0])
    y = round_half_up(trajs.start_xy[:, 1])
    for a in annotations:
        keep |= ((trajs.start_frame == a.frame_index)
                 & (x >= a.x) & (x <= a.x + a.w - 1) & (y >= a.y) & (y <= a.y + a.h - 1))
    return keep


def sample_gt(trajs: TrajectorySet, annotations) -> TrajectorySet:
    """Keep trajectories starting inside an annotation box of their start frame."""
    return trajs[gt_mask(trajs, annotations)]
