"""End-to-end sampling sweep over a labelled corpus.

Per video: frames -> flow -> trajectories -> descriptors, plus EdgeBox and
FusionEdgeBox saliency at every trajectory start pixel and the ground-truth
box mask.  Per (strategy, parameter, split): sample, fit codebooks on the
training videos only, encode, train the SVM and score the test videos.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import DESCRIPTOR_DIMS, DESCRIPTOR_TYPES
from .classifier import predict, train
from .descriptors import compute_descriptors
from .encoding import concatenate, fisher_encode, fit_codebook
from .flow import FlowParams, compute_flow
from .media_io import load_annotations, load_sequence
from .proposals import ScoreParams, frame_scores, generate_boxes
from .saliency import build_saliency, gt_mask, random_mask, start_saliency
from .trajectories import TrackParams, extract_trajectories

log = logging.getLogger(__name__)

RECORD_BYTES = sum(DESCRIPTOR_DIMS.values()) * 4 + 76
CSV_HEADER = ["strategy", "param", "split", "accuracy", "retained_fraction", "est_memory_bytes"]


class StageError(RuntimeError):
    def __init__(self, stage: str, video: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed for video {video!r}: {cause}")
        self.stage, self.video = stage, video


@dataclass
class ExperimentConfig:
    corpus_root: str
    splits: list  # [[train_file, test_file], ...] relative to corpus_root
    labels_file: str = "labels.csv"
    strategies: list = field(default_factory=lambda: ["dense", "random", "edgebox", "fusionedgebox", "gt"])
    sigmas: list = field(default_factory=lambda: [0.2, 0.4, 0.6])
    rates: list = field(default_factory=lambda: [0.8, 0.6, 0.4, 0.3])
    random_seed: int = 0
    matched: bool = True  # extra rows at the retained fraction of fusion@match_sigma and gt
    match_sigma: float = 0.2
    score_params: dict = field(default_factory=dict)
    gmm_k: int = 32
    sample_size: int = 20_000
    encoding_seed: int = 0
    power_norm: bool = False
    C: float = 100.0
    output: str = "results.csv"
    workers: int = 1

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        base = Path(path).parent
        cfg = cls(**raw)
        root = Path(cfg.corpus_root)
        if not root.is_absolute():
            cfg.corpus_root = str((base / root).resolve())
        cfg.validate()
        return cfg

    def validate(self) -> None:
        root = Path(self.corpus_root)
        for p in [root / self.labels_file] + [root / f for pair in self.splits for f in pair]:
            if not p.exists():
                raise FileNotFoundError(f"config references missing path {p}")
        for v in list(self.sigmas) + list(self.rates) + [self.match_sigma]:
            if not 0 <= v <= 1:
                raise ValueError(f"sigma/rate {v} outside [0, 1]")
        ScoreParams(**self.score_params)

    @property
    def scores(self) -> ScoreParams:
        return ScoreParams(**self.score_params)


@dataclass
class VideoFeatures:
    video: str
    label: str
    descriptors: dict  # type -> (n, dim) float32
    sal_edgebox: np.ndarray  # (n,) start-pixel saliency
    sal_fusion: np.ndarray
    gt: np.ndarray  # (n,) bool

    @property
    def n(self) -> int:
        return len(self.gt)


@dataclass
class ResultRow:
    strategy: str
    param: str
    split: str
    accuracy: float
    retained_fraction: float
    est_memory_bytes: int

    def __post_init__(self):
        if not 0 <= self.accuracy <= 1 or not 0 <= self.retained_fraction <= 1:
            raise ValueError(f"row out of range: {self}")


def read_labels(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0][:2] == ["video", "label"]:
        rows = rows[1:]
    return {r[0]: r[1] for r in rows if r}


def read_split(path) -> list:
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]


def extract_video(video_dir, annotations_path, label: str, score_params: ScoreParams,
                  track_params: TrackParams = TrackParams(), flow_params: FlowParams = FlowParams()) -> VideoFeatures:
    video = Path(video_dir).name
    stage = "load"
    try:
        frames = load_sequence(video_dir)
        h, w = frames[0].height, frames[0].width
        stage = "flow"
        flows = [compute_flow(frames[i], frames[i + 1], flow_params) for i in range(len(frames) - 1)]
        stage = "trajectories"
        trajs = extract_trajectories(frames, flows, track_params)
        stage = "descriptors"
        desc = compute_descriptors(frames, flows, trajs, track_params=track_params)
        stage = "proposals"
        boxes = generate_boxes(w, h, score_params)
        maps_e, maps_f = {}, {}
        for f in np.unique(trajs.start_frame):
            f = int(f)
            flow = flows[min(f, len(flows) - 1)]
            fs = frame_scores(frames[f], flow, score_params, boxes)
            n_top = score_params.top_n_votes
            maps_e[f] = build_saliency(fs.top_boxes(score_params.alpha, 0.0, n_top), w, h, f)
            maps_f[f] = build_saliency(fs.top_boxes(score_params.alpha, score_params.beta, n_top), w, h, f)
        stage = "saliency"
        sal_e = start_saliency(trajs, maps_e)
        sal_f = start_saliency(trajs, maps_f)
        stage = "annotations"
        ann = load_annotations(annotations_path, w, h) if annotations_path and Path(annotations_path).exists() else []
        gt = gt_mask(trajs, ann)
    except Exception as exc:
        raise StageError(stage, video, exc) from exc
    return VideoFeatures(video, label, desc, sal_e, sal_f, gt)


def _extract_job(args):
    return extract_video(*args)


def extract_corpus(cfg: ExperimentConfig, videos) -> list[VideoFeatures]:
    root = Path(cfg.corpus_root)
    labels = read_labels(root / cfg.labels_file)
    jobs = [(root / "videos" / v, root / "annotations" / f"{v}.csv", labels[v], cfg.scores) for v in videos]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            return list(ex.map(_extract_job, jobs))
    out = []
    for j in jobs:
        log.info("extracting %s", Path(j[0]).name)
        out.append(_extract_job(j))
    return out


# sweep -------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _best_sigma(values: np.ndarray, target: float) -> float:
    """Threshold among observed saliency values whose retained fraction is closest to ``target``."""
    cands = np.unique(values)
    fracs = np.array([(values >= c).mean() for c in cands])
    return float(cands[np.argmin(np.abs(fracs - target))])


def sampling_plan(cfg: ExperimentConfig, feats: list[VideoFeatures]) -> list:
    """[(strategy, param, [mask per video]), ...] in a fixed order."""
    plan = []
    for s in cfg.strategies:
        if s == "dense":
            plan.append(("dense", "-", [np.ones(f.n, bool) for f in feats]))
        elif s == "random":
            for r in cfg.rates:
                plan.append(("random", _fmt(r), _random_masks(feats, r, cfg.random_seed)))
        elif s in ("edgebox", "fusionedgebox"):
            attr = "sal_edgebox" if s == "edgebox" else "sal_fusion"
            for sg in cfg.sigmas:
                plan.append((s, _fmt(sg), [getattr(f, attr) >= sg for f in feats]))
        elif s == "gt":
            plan.append(("gt", "-", [f.gt.copy() for f in feats]))
        else:
            raise ValueError(f"unknown strategy {s!r}")
    if cfg.matched:
        total = sum(f.n for f in feats)
        fus = np.concatenate([f.sal_fusion for f in feats])
        edge = np.concatenate([f.sal_edgebox for f in feats])
        target = float((fus >= cfg.match_sigma).mean())
        if not any(p[0] == "fusionedgebox" and p[1] == _fmt(cfg.match_sigma) for p in plan):
            plan.append(("fusionedgebox", _fmt(cfg.match_sigma), [f.sal_fusion >= cfg.match_sigma for f in feats]))
        sg = _best_sigma(edge, target)
        if not any(p[0] == "edgebox" and p[1] == _fmt(sg) for p in plan):
            plan.append(("edgebox", _fmt(sg), [f.sal_edgebox >= sg for f in feats]))
        gt_frac = sum(int(f.gt.sum()) for f in feats) / max(total, 1)
        for r in (target, gt_frac):
            if not any(p[0] == "random" and p[1] == _fmt(r) for p in plan):
                plan.append(("random", _fmt(r), _random_masks(feats, r, cfg.random_seed)))
    return plan


def _random_masks(feats, rate, seed):
    # one stream over the whole corpus, consumed in video order
    allm = random_mask(sum(f.n for f in feats), rate, seed)
    out, i = [], 0
    for f in feats:
        out.append(allm[i: i + f.n])
        i += f.n
    return out


def feature_hash(feats, masks, videos) -> str:
    h = hashlib.sha1()
    for f, m in zip(feats, masks):
        if f.video in videos:
            h.update(f.video.encode())
            h.update(np.packbits(m).tobytes())
    return h.hexdigest()


@dataclass
class SplitOutcome:
    accuracy: float
    confusion: np.ndarray
    fit_videos: list
    fit_hash: str


def run_split(cfg: ExperimentConfig, feats, masks, train_ids, test_ids, classes) -> SplitOutcome:
    by_id = {f.video: (f, m) for f, m in zip(feats, masks)}
    train_set = set(train_ids)
    fit_videos = [v for v in train_ids if v in by_id]
    blocks = {v: {} for v in by_id}
    for t in DESCRIPTOR_TYPES:
        train_feats = np.concatenate([by_id[v][0].descriptors[t][by_id[v][1]] for v in fit_videos])
        n = len(train_feats)
        k = min(cfg.gmm_k, max(1, n // 10))
        if k < cfg.gmm_k:
            log.warning("%s: only %d training features, using K=%d", t, n, k)
        try:
            cb = fit_codebook(t, train_feats, k, cfg.encoding_seed, cfg.sample_size)
        except ValueError as exc:
            raise StageError("codebook", ",".join(fit_videos[:3]) + ",...", exc) from exc
        for v, (f, m) in by_id.items():
            blocks[v][t] = fisher_encode(f.descriptors[t][m], cb, cfg.power_norm)
    fv = {v: concatenate(b) for v, b in blocks.items()}
    label_idx = {c: i for i, c in enumerate(classes)}
    Xtr = np.stack([fv[v] for v in train_ids])
    ytr = np.array([label_idx[by_id[v][0].label] for v in train_ids])
    model = train(Xtr, ytr, cfg.C)
    Xte = np.stack([fv[v] for v in test_ids])
    yte = np.array([label_idx[by_id[v][0].label] for v in test_ids])
    pred = predict(model, Xte)
    conf = np.zeros((len(classes), len(classes)), np.int64)
    np.add.at(conf, (yte, pred), 1)
    assert train_set.isdisjoint(test_ids)
    return SplitOutcome(float(np.mean(pred == yte)), conf, fit_videos, feature_hash(feats, masks, train_set))


def run_sweep(cfg: ExperimentConfig, feats: list[VideoFeatures] | None = None):
    """Run every (strategy, parameter, split); returns (rows, summary rows, extras)."""
    root = Path(cfg.corpus_root)
    splits = [(read_split(root / a), read_split(root / b)) for a, b in cfg.splits]
    videos = sorted({v for tr, te in splits for v in tr + te})
    if feats is None:
        feats = extract_corpus(cfg, videos)
    feats = sorted(feats, key=lambda f: f.video)
    classes = sorted({f.label for f in feats})
    total = sum(f.n for f in feats)
    rows, summary, extras = [], [], {"confusion": {}, "fit_hash": {}, "fit_videos": {}}
    for strategy, param, masks in sampling_plan(cfg, feats):
        kept = int(sum(int(m.sum()) for m in masks))
        frac = kept / total if total else 0.0
        accs = []
        for si, (tr, te) in enumerate(splits, start=1):
            log.info("%s %s split %d", strategy, param, si)
            out = run_split(cfg, feats, masks, tr, te, classes)
            accs.append(out.accuracy)
            rows.append(ResultRow(strategy, param, str(si), out.accuracy, frac, kept * RECORD_BYTES))
            key = f"{strategy}:{param}:{si}"
            extras["confusion"][key] = out.confusion.tolist()
            extras["fit_hash"][key] = out.fit_hash
            extras["fit_videos"][key] = out.fit_videos
        summary.append(ResultRow(strategy, param, "mean", float(np.mean(accs)), frac, kept * RECORD_BYTES))
    extras["classes"] = classes
    extras["total_trajectories"] = total
    return rows, summary, extras


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.strategy, r.param, r.split, f"{r.accuracy:.6f}", f"{r.retained_fraction:.6f}", r.est_memory_bytes])
    return buf.getvalue()


def write_results(cfg: ExperimentConfig, rows, summary, extras, out_path=None) -> Path:
    out = Path(out_path or cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rows_to_csv(rows + summary))
    side = out.with_suffix(".extras.json")
    with open(side, "w") as fh:
        json.dump({"config": asdict(cfg), **extras}, fh, indent=1, sort_keys=True)
    return out
