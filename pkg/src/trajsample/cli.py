"""Command-line entry point: ``trajsample <command> ...``.

Each stage reads and writes the binary cache formats from ``media_io`` so
stages can be run and inspected one at a time; ``sweep`` runs everything.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import DESCRIPTOR_TYPES
from .classifier import predict, read_model, train, write_model
from .descriptors import compute_descriptors
from .encoding import concatenate, fisher_encode, fit_codebook, read_codebook, write_codebook
from .flow import FlowParams, compute_flow
from .harness import ExperimentConfig, read_labels, read_split, run_sweep, write_results
from .media_io import (BoxRecord, load_annotations, load_sequence, read_boxes, read_descriptors, read_flow,
                       read_saliency, read_trajectories, write_boxes, write_descriptors, write_flow,
                       write_saliency, write_trajectories)
from .proposals import ScoreParams, frame_scores
from .saliency import SamplingDecision, build_saliency, gt_mask, random_mask, start_saliency
from .synth import make_synthetic_corpus
from .trajectories import extract_trajectories

FLOW_NAME = "flow_{:06d}.flo"
SAL_NAME = "sal_{:06d}.sal"


def _flows(video: Path, flow_dir: Path | None, frames):
    if flow_dir is not None:
        return [read_flow(flow_dir / FLOW_NAME.format(i)) for i in range(len(frames) - 1)]
    return [compute_flow(frames[i], frames[i + 1], FlowParams()) for i in range(len(frames) - 1)]


def _score_params(a) -> ScoreParams:
    return ScoreParams(alpha=a.alpha, beta=a.beta, kappa=a.kappa, max_boxes=a.max_boxes, top_n_votes=a.top_n)


# commands ----------------------------------------------------------------------

def cmd_synth(a):
    m = make_synthetic_corpus(a.out, a.seed)
    print(f"wrote {len(m['videos'])} videos to {a.out}")


def cmd_flow(a):
    frames = load_sequence(a.video)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(frames) - 1):
        write_flow(out / FLOW_NAME.format(i), compute_flow(frames[i], frames[i + 1]))
    print(f"wrote {len(frames) - 1} flow fields to {out}")


def cmd_extract(a):
    frames = load_sequence(a.video)
    flows = _flows(Path(a.video), Path(a.flow_dir) if a.flow_dir else None, frames)
    trajs = extract_trajectories(frames, flows)
    desc = compute_descriptors(frames, flows, trajs)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(out / "trajectories.trj", trajs)
    for t in DESCRIPTOR_TYPES:
        write_descriptors(out / f"{t}.dsc", desc[t])
    print(f"{len(trajs)} trajectories written to {out}")


def cmd_proposals(a):
    params = _score_params(a)
    frames = load_sequence(a.video)
    flows = _flows(Path(a.video), Path(a.flow_dir) if a.flow_dir else None, frames)
    wanted = a.frames if a.frames else range(len(frames))
    records = []
    for f in wanted:
        flow = flows[min(f, len(flows) - 1)] if flows else None
        for b in frame_scores(frames[f], flow, params).ranked(params.alpha, params.beta)[: params.top_n_votes]:
            records.append(BoxRecord(f, b.x, b.y, b.w, b.h, b.s_fusion))
    write_boxes(a.out, records)
    print(f"{len(records)} boxes written to {a.out}")


def cmd_saliency(a):
    records = read_boxes(a.boxes)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    by_frame: dict[int, list] = {}
    for r in records:
        by_frame.setdefault(r.frame, []).append(r)
    for f, rs in sorted(by_frame.items()):
        rs = [r for r in rs if r.score > 0][: a.top_n]
        m = build_saliency(rs, a.width, a.height, f, weights=[r.score for r in rs] if a.weighted else None)
        write_saliency(out / SAL_NAME.format(f), m.values)
    print(f"{len(by_frame)} saliency maps written to {out}")


def cmd_sample(a):
    src = Path(a.features)
    trajs = read_trajectories(src / "trajectories.trj")
    decision = SamplingDecision(a.strategy, a.sigma, a.rate, a.seed if a.strategy == "random" else None)
    if decision.strategy == "dense":
        keep = np.ones(len(trajs), bool)
    elif decision.strategy == "random":
        keep = random_mask(len(trajs), decision.rate, decision.seed)
    elif decision.strategy == "gt":
        if not a.gt_file:
            raise SystemExit("error: --gt-file is required for strategy gt")
        keep = gt_mask(trajs, load_annotations(a.gt_file))
    else:
        if not a.saliency_dir:
            raise SystemExit(f"error: --saliency-dir is required for strategy {decision.strategy}")
        sal_dir = Path(a.saliency_dir)
        maps = {}
        for f in np.unique(trajs.start_frame):
            p = sal_dir / SAL_NAME.format(int(f))
            if p.exists():
                maps[int(f)] = read_saliency(p)
        keep = start_saliency(trajs, maps) >= decision.sigma
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(out / "trajectories.trj", trajs[keep])
    for t in DESCRIPTOR_TYPES:
        p = src / f"{t}.dsc"
        if p.exists():
            write_descriptors(out / f"{t}.dsc", read_descriptors(p)[keep])
    frac = keep.mean() if len(keep) else 0.0
    print(f"kept {int(keep.sum())} of {len(keep)} trajectories ({frac:.4f})")


def cmd_codebook(a):
    feats = np.concatenate([read_descriptors(Path(d) / f"{a.type}.dsc" if Path(d).is_dir() else d)
                            for d in a.inputs])
    cb = fit_codebook(a.type, feats, a.gmm_k, a.seed, a.sample_size)
    write_codebook(a.out, cb)
    print(f"{a.type} codebook: {len(feats)} features, K={a.gmm_k}, FV dim {cb.fv_dim}")


def cmd_encode(a):
    cbs = {t: read_codebook(Path(a.codebooks) / f"{t}.cbk") for t in DESCRIPTOR_TYPES}
    feats = Path(a.features)
    blocks = {t: fisher_encode(read_descriptors(feats / f"{t}.dsc"), cbs[t], a.power) for t in DESCRIPTOR_TYPES}
    fv = concatenate(blocks)
    write_descriptors(a.out, fv[None, :])
    print(f"Fisher vector of dimension {fv.size} written to {a.out}")


def _design(fv_dir, ids, labels, classes):
    X = np.concatenate([read_descriptors(Path(fv_dir) / f"{v}.dsc") for v in ids]).astype(np.float64)
    idx = {c: i for i, c in enumerate(classes)}
    return X, np.array([idx[labels[v]] for v in ids])


def cmd_train(a):
    labels = read_labels(a.labels)
    classes = sorted(set(labels.values()))
    ids = read_split(a.split)
    X, y = _design(a.fv_dir, ids, labels, classes)
    model = train(X, y, a.c)
    write_model(a.out, model)
    print(f"trained {len(model.classes)} classes on {len(ids)} videos")


def cmd_predict(a):
    model = read_model(a.model)
    classes = sorted(set(read_labels(a.labels).values()))
    x = read_descriptors(a.fv)[0]
    print(classes[int(predict(model, x))])


def cmd_eval(a):
    model = read_model(a.model)
    labels = read_labels(a.labels)
    classes = sorted(set(labels.values()))
    ids = read_split(a.split)
    X, y = _design(a.fv_dir, ids, labels, classes)
    acc = float(np.mean(predict(model, X) == y))
    print(f"accuracy {acc:.6f} on {len(ids)} videos")


def cmd_sweep(a):
    cfg = ExperimentConfig.load(a.config)
    if a.workers:
        cfg.workers = a.workers
    rows, summary, extras = run_sweep(cfg)
    out = write_results(cfg, rows, summary, extras, a.out)
    print(f"wrote {len(rows) + len(summary)} rows to {out}")


# parser ------------------------------------------------------------------------

def _add_score_flags(p):
    d = ScoreParams()
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--beta", type=float, default=d.beta)
    p.add_argument("--kappa", type=float, default=d.kappa)
    p.add_argument("--max-boxes", type=int, default=d.max_boxes)
    p.add_argument("--top-n", type=int, default=d.top_n_votes)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trajsample", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic 3-class corpus")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("flow", help="optical flow for every consecutive frame pair")
    p.add_argument("video")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("extract", help="trajectories and descriptors for one video")
    p.add_argument("video")
    p.add_argument("--flow-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("proposals", help="ranked proposal boxes per frame (CSV)")
    p.add_argument("video")
    p.add_argument("--flow-dir")
    p.add_argument("--frames", type=int, nargs="*")
    p.add_argument("--out", required=True)
    _add_score_flags(p)
    p.set_defaults(func=cmd_proposals)

    p = sub.add_parser("saliency", help="vote saliency maps from a box CSV")
    p.add_argument("boxes")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--top-n", type=int, default=ScoreParams().top_n_votes)
    p.add_argument("--weighted", action="store_true", help="score-weighted votes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("sample", help="filter trajectories and descriptors by a strategy")
    p.add_argument("features", help="directory written by 'extract'")
    p.add_argument("--strategy", required=True, choices=["dense", "random", "edgebox", "fusionedgebox", "gt"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--saliency-dir")
    p.add_argument("--gt-file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("codebook", help="fit PCA + GMM for one descriptor type")
    p.add_argument("inputs", nargs="+", help="feature directories or .dsc files")
    p.add_argument("--type", required=True, choices=DESCRIPTOR_TYPES)
    p.add_argument("--gmm-k", type=int, default=32)
    p.add_argument("--sample-size", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_codebook)

    p = sub.add_parser("encode", help="Fisher vector of one video's features")
    p.add_argument("features")
    p.add_argument("--codebooks", required=True, help="directory holding <type>.cbk")
    p.add_argument("--power", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    for name, func, help_ in (("train", cmd_train, "train the one-vs-rest SVM"),
                              ("eval", cmd_eval, "accuracy on a split")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--fv-dir", required=True, help="directory of <video>.dsc Fisher vectors")
        p.add_argument("--labels", required=True)
        p.add_argument("--split", required=True)
        if name == "train":
            p.add_argument("--c", type=float, default=100.0)
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--model", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="predict the label of one Fisher vector")
    p.add_argument("fv")
    p.add_argument("--model", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="full strategy sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
