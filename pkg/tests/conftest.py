import cv2
import numpy as np
import pytest
from scipy import ndimage

from trajsample.media_io import Frame


def blob_texture(h, w, seed=0, sigma=4.0, lo=20.0, hi=235.0):
    """Smooth random texture (Gaussian-filtered noise), wrap-around so shifts stay smooth."""
    rng = np.random.default_rng(seed)
    t = ndimage.gaussian_filter(rng.normal(size=(h, w)), sigma, mode="wrap")
    t = (t - t.min()) / (t.max() - t.min())
    return lo + (hi - lo) * t


def translating_video(n_frames, h, w, velocity, seed=0, sigma=3.0):
    """Frames of a wrap-around texture translating by ``velocity`` px per frame."""
    big = blob_texture(h, w, seed, sigma)
    frames = []
    for t in range(n_frames):
        dx, dy = velocity[0] * t, velocity[1] * t
        m = np.float32([[1, 0, dx], [0, 1, dy]])
        img = cv2.warpAffine(big, m, (w, h), flags=cv2.INTER_CUBIC, borderMode=cv2.BORDER_WRAP)
        frames.append(Frame(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8), t))
    return frames


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A reduced synthetic corpus (3 videos per class, 20 frames) for pipeline tests."""
    from trajsample.synth import SynthParams, make_synthetic_corpus

    out = tmp_path_factory.mktemp("corpus")
    manifest = make_synthetic_corpus(out, seed=3, params=SynthParams(videos_per_class=3, n_frames=20))
    return out, manifest


# (number, title, passed, detail, seconds) filled in by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, detail, secs in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2} {title} ({secs:.1f}s) {detail}")
