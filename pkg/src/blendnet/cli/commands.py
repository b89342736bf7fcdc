"""Implementations of the ``blendnet`` subcommands."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import shutil
from pathlib import Path

import cv2

from .. import autodiff as ad
from .. import selftest
from ..autodiff import checkpoint
from ..config import ConfigError, RunConfig
from ..detector.inference import postprocess, prepare_frames, snippet_attention, stem_features
from ..evaluation import VISIBILITY_BINS, csv_table, mean_average_precision, project_attention, \
    stratified_report, text_table, write_results
from ..training import build_detector, evaluate, ground_truths, train
from ..video import generate_synthetic, load_dataset, save_clip
from ..video.annotations import dataset_files
from ..video.clip import snippet_indices

log = logging.getLogger("blendnet")

AXES = {
    "insertion_point": ("after_add", "after_1x1", "after_3x3"),
    "embedding_strategy": ("positional", "main_and_refs"),
    "T_train": (1, 3, 5),
    "T_test": (1, 3, 5, 9),
    "order": ("none", "scm_only", "tcm_only", "tcm_then_scm", "scm_then_tcm"),
}


class UsageError(Exception):
    """Bad invocation: exit code 1."""


# ---------------------------------------------------------------- shared helpers

def load_config(args):
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        cfg = RunConfig.load(path)
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def output_dir(args, owned=()):
    """Create ``--out``; a non-empty directory needs ``--force``, which clears the ``owned`` entries."""
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
        for name in owned:
            target = out / name
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


def echo_config(cfg, out):
    cfg.save(out / "config.ini")


def split_dir(args, cfg, split):
    if getattr(args, "data", None):
        return Path(args.data) / split
    return Path(cfg.train_dir if split == "train" else cfg.test_dir)


def load_split(args, cfg, split):
    path = split_dir(args, cfg, split)
    if not path.is_dir():
        raise FileNotFoundError(f"{split} split {path} does not exist (run `blendnet gen` first)")
    clips = load_dataset(path)
    if not clips:
        raise ValueError(f"{split} split {path} contains no clips")
    return clips


def load_model(cfg, path):
    model = build_detector(cfg)
    blob = Path(path).read_bytes()
    model.load_state_dict(checkpoint.loads(blob))
    return model


def _file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def report_rows(dets, gts, iou_thresh):
    return [[r.label, r.num_gt, r.recalled, r.recall]
            for r in stratified_report(dets, gts, VISIBILITY_BINS, iou_thresh=iou_thresh)]


# ---------------------------------------------------------------- gen

def dataset_manifest(out, cfg):
    files = {}
    for split in ("train", "test"):
        for rel in dataset_files(out / split):
            files[f"{split}/{rel}"] = _file_sha256(out / split / rel)
    digest = hashlib.sha256("".join(f"{k} {v}\n" for k, v in sorted(files.items())).encode()).hexdigest()
    return {"seed": cfg.seed, "num_train": cfg.num_train, "num_test": cfg.num_test,
            "frames_per_clip": cfg.frames_per_clip, "config_sha256": cfg.digest(), "files": files,
            "sha256": digest}


def cmd_gen(args):
    cfg = load_config(args)
    for name in ("num_train", "num_test", "frames_per_clip"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(cfg, name)}")
    out = output_dir(args, owned=("train", "test", "dataset.json", "config.ini"))
    echo_config(cfg, out)
    for split in ("train", "test"):
        clips = generate_synthetic(cfg.synth_config(split))
        for clip in clips:
            save_clip(clip, out / split / clip.id)
        log.info("wrote %d %s clips to %s", len(clips), split, out / split)
    manifest = dataset_manifest(out, cfg)
    (out / "dataset.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    log.info("dataset sha256 %s", manifest["sha256"])


# ---------------------------------------------------------------- train

def cmd_train(args):
    cfg = load_config(args)
    if args.checkpoint:
        cfg = cfg.with_(warm_start=str(args.checkpoint))
    train_clips = load_split(args, cfg, "train")
    test_path = split_dir(args, cfg, "test")
    val_clips = load_dataset(test_path) if test_path.is_dir() else []
    out = output_dir(args)
    echo_config(cfg, out)
    _, records = train(cfg, train_clips, val_clips, out, log=log.info)
    log.info("final checkpoint %s", out / records[-1].checkpoint)


# ---------------------------------------------------------------- eval

def write_eval_reports(out, cfg, dets, gts, header=""):
    m, curves = mean_average_precision(dets, gts, cfg.iou_thresh, classes=range(cfg.num_classes))
    write_results(out / "results.txt", dets)
    rows = report_rows(dets, gts, cfg.iou_thresh)
    strat_header = ["visibility", "num_gt", "recalled", "recall"]
    ap_rows = [[c, curve.num_gt, curve.num_det, curve.ap] for c, curve in curves.items()]
    text = (header + f"mAP@{cfg.iou_thresh:g}: {m:.4f}\n\n" + text_table(["class", "num_gt", "num_det", "AP"], ap_rows)
            + "\nrecall at score >= 0.5 by visibility\n" + text_table(strat_header, rows))
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.csv").write_text(csv_table(strat_header, rows), encoding="utf-8")
    for c, curve in curves.items():
        pr = [[float(r), float(p)] for r, p in zip(curve.recall, curve.precision)]
        (out / f"pr_class{c}.csv").write_text(csv_table(["recall", "precision"], pr), encoding="utf-8")
    summary = {"map": None if math.isnan(m) else m, "T_test": cfg.T_test, "num_detections": len(dets),
               "num_gt": len(gts), "ap": {str(c): None if math.isnan(v.ap) else v.ap for c, v in curves.items()},
               "recall_by_visibility": {r[0]: r[3] for r in rows}}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return m, rows


def cmd_eval(args):
    cfg = load_config(args)
    if args.t_test is not None:
        cfg = cfg.with_(T_test=args.t_test)
    clips = load_split(args, cfg, args.split)
    model = load_model(cfg, args.checkpoint)
    out = output_dir(args)
    echo_config(cfg, out)
    m, dets = evaluate(model, clips, cfg)
    header = f"checkpoint {args.checkpoint}\nsplit {args.split} ({len(clips)} clips), T_test {cfg.T_test}\n"
    write_eval_reports(out, cfg, dets, ground_truths(clips), header)
    log.info("mAP %.4f on %d %s clips (T_test %d)", m, len(clips), args.split, cfg.T_test)


# ---------------------------------------------------------------- ablate

def _convert(axis, raw):
    if axis in ("T_train", "T_test"):
        try:
            return int(raw)
        except ValueError:
            raise UsageError(f"{axis} values must be integers, got {raw!r}") from None
    return raw


def ablation_grid(axes_text, value_specs):
    """``(axes, combos)`` for the requested axes; each combo is a dict ``axis -> value``."""
    axes = [a.strip() for a in axes_text.split(",") if a.strip()]
    valid = ", ".join(AXES)
    for a in axes:
        if a not in AXES:
            raise UsageError(f"unknown ablation axis {a!r}; valid axes: {valid}")
    if len(set(axes)) != len(axes):
        raise UsageError("ablation axes must not repeat")
    values = {a: AXES[a] for a in axes}
    for spec in value_specs:
        axis, sep, raw = spec.partition("=")
        if not sep or axis not in values:
            raise UsageError(f"--values {spec!r} must be AXIS=V1,V2 with AXIS among the chosen axes")
        values[axis] = tuple(_convert(axis, v.strip()) for v in raw.split(",") if v.strip())
        if not values[axis]:
            raise UsageError(f"--values {spec!r} lists no values")
    combos = [dict(zip(axes, vs)) for vs in itertools.product(*(values[a] for a in axes))]
    return axes, combos


def _run_name(combo):
    return "_".join(f"{k}-{v}" for k, v in combo.items()) or "baseline"


def cmd_ablate(args):
    cfg = load_config(args)
    axes, combos = ablation_grid(args.axes, args.values)
    for combo in combos:
        cfg.with_(**combo)  # validate every setting before any training starts
    train_clips = load_split(args, cfg, "train")
    test_clips = load_split(args, cfg, "test")
    out = output_dir(args)
    echo_config(cfg, out)
    gts = ground_truths(test_clips)
    header = axes + ["mAP"] + [f"recall {lo:g}-{hi:g}" for lo, hi in VISIBILITY_BINS]
    rows, trained = [], {}
    for combo in combos:
        train_key = {k: v for k, v in combo.items() if k != "T_test"}
        name = _run_name(train_key)
        run_cfg = cfg.with_(**combo)
        if name not in trained:
            log.info("training %s", name)
            trained[name], _ = train(run_cfg, train_clips, [], out / "runs" / name, log=log.info)
        m, dets = evaluate(trained[name], test_clips, run_cfg)
        recalls = [r[3] for r in report_rows(dets, gts, cfg.iou_thresh)]
        rows.append([combo[a] for a in axes] + [m] + recalls)
        log.info("%s: mAP %.4f", _run_name(combo), m)
    (out / "ablation.txt").write_text(text_table(header, rows), encoding="utf-8")
    (out / "ablation.csv").write_text(csv_table(header, rows), encoding="utf-8")
    log.info("\n%s", text_table(header, rows))


# ---------------------------------------------------------------- visualize

def _to_source(image, geo, content):
    """Crop the letterboxed content region and resize it back to source resolution."""
    rw, rh = content
    return cv2.resize(image[:rh, :rw], (geo.src_w, geo.src_h), interpolation=cv2.INTER_LINEAR)


def cmd_visualize(args):
    cfg = load_config(args)
    if args.t_test is not None:
        cfg = cfg.with_(T_test=args.t_test)
    model = build_detector(cfg)
    if not model.blend.order.uses_tcm:
        raise ValueError(f"no attention to visualize: blend order {cfg.order!r} has no temporal module")
    clips = {c.id: c for c in load_split(args, cfg, args.split)}
    if args.clip not in clips:
        raise UsageError(f"clip {args.clip!r} not in the {args.split} split")
    clip = clips[args.clip]
    if not 0 <= args.t < len(clip):
        raise UsageError(f"frame {args.t} outside clip {clip.id} of {len(clip)} frames")
    model.load_state_dict(checkpoint.loads(Path(args.checkpoint).read_bytes()))
    out = output_dir(args)
    echo_config(cfg, out)

    frames, geo = prepare_frames(clip, cfg.target_short)
    content = (int(round(geo.src_w * geo.scale)), int(round(geo.src_h * geo.scale)))
    feats = stem_features(model, frames)
    idx = snippet_indices(args.t, cfg.T_test, cfg.test_stride, len(clip))
    attention = snippet_attention(model, feats, idx)
    tau = cfg.T_test // 2
    written = []
    for k, amap in enumerate(attention):
        offset = k - tau
        img, flat = project_attention(amap, geo.out_w, geo.out_h)
        name = f"attn_{clip.id}_{args.t}_{offset}.png"
        cv2.imwrite(str(out / name), _to_source(img, geo, content))
        written.append({"file": name, "offset": offset, "frame": int(idx[k]), "flat": flat})
        if flat:
            log.warning("attention map for offset %d is flat (untrained or zero transforms)", offset)

    with ad.no_grad():
        probs, deltas = model.head_forward(model.pyramid_from_stem(feats, idx))
    dets = postprocess(probs.data, deltas.data, model.anchors(geo.out_w, geo.out_h).cxcywh, geo.out_w, geo.out_h,
                       cfg.inference_config())
    canvas = cv2.cvtColor(clip.frames[args.t], cv2.COLOR_RGB2BGR).copy()
    for b in clip.annotations[args.t]:
        cv2.rectangle(canvas, (int(round(b.x0)), int(round(b.y0))), (int(round(b.x1)), int(round(b.y1))),
                      (0, 0, 255), 1)
    kept = 0
    for box, _, score in dets:
        if score < 0.5:
            continue
        x0, y0, x1, y1 = geo.inverse_boxes([box])[0]
        cv2.rectangle(canvas, (int(round(x0)), int(round(y0))), (int(round(x1)), int(round(y1))), (0, 255, 0), 1)
        kept += 1
    frame_name = f"frame_{clip.id}_{args.t}.png"
    cv2.imwrite(str(out / frame_name), canvas)
    meta = {"clip": clip.id, "t": args.t, "T": cfg.T_test, "attention": written, "frame": frame_name,
            "detections_drawn": kept, "score_threshold": 0.5}
    (out / "visualize.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    log.info("wrote %d attention maps and %s to %s", len(written), frame_name, out)


# ---------------------------------------------------------------- selftest

def cmd_selftest(args):
    ok = selftest.run(log=log.info)
    log.info("selftest %s", "passed" if ok else "FAILED")
    return ok

