"""Snippet losses, the learning-rate schedule and the deterministic training loop."""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import checkpoint
from .detector.inference import detect_clips
from .detector.losses import box_loss, focal_loss
from .detector.model import Detector
from .detector.targets import assign_targets
from .evaluation.metrics import GroundTruth, mean_average_precision
from .video.augment import augment, letterbox_snippet
from .video.clip import sample_snippet


class NonFiniteLossError(RuntimeError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


def learning_rate(iteration, epoch, cfg):
    """Learning rate of global step ``iteration`` (0-based) inside ``epoch`` (1-based).

    Linear warm-up from ``lr_start`` to ``lr_peak`` over ``warmup_iters`` steps,
    then a factor ``decay_factor`` for each decay epoch already reached.
    """
    if cfg.warmup_iters > 0:
        lr = cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * min(iteration, cfg.warmup_iters) / cfg.warmup_iters
    else:
        lr = cfg.lr_peak
    for e in cfg.decay_epochs:
        if epoch >= e:
            lr *= cfg.decay_factor
    return lr


def build_detector(cfg, seed=None):
    return Detector(cfg.detector_config(), cfg.blend_config(), seed=cfg.seed if seed is None else seed)


def ground_truths(clips):
    return [GroundTruth(c.id, i, b.xyxy, b.class_id, b.visibility)
            for c in clips for i, boxes in enumerate(c.annotations) for b in boxes]


def detection_loss(model, frames, boxes, labels, anchors=None):
    """Focal plus smooth-L1 loss of the snippet's centre frame; returns ``(total, cls, box)``."""
    frames = np.asarray(frames, dtype=np.float64)
    h, w = frames.shape[-2:]
    anchors = anchors if anchors is not None else model.anchors(w, h)
    cfg = model.config
    targets = assign_targets(anchors, boxes, labels, cfg.fg_iou, cfg.bg_iou)
    probs, deltas = model.head_forward(model.snippet_pyramid(frames))
    cls = focal_loss(probs, targets.labels, cfg.focal_alpha, cfg.focal_gamma, cfg.num_classes)
    reg = box_loss(deltas, targets.labels, targets.box_targets, cfg.smooth_l1_beta)
    return ad.add(cls, reg), cls, reg


def prepare_snippet(clip, t, cfg, T, aug_seed=None):
    """Sampled, augmented (when ``aug_seed`` is given) and letterboxed snippet."""
    snippet = sample_snippet(clip, t, T, cfg.train_stride)
    if aug_seed is not None:
        snippet = augment(snippet, seed=aug_seed, config=cfg.augment_config())
    snippet, _ = letterbox_snippet(snippet, cfg.target_short)
    return snippet


def snippet_seed(seed, epoch, position):
    return int(np.random.SeedSequence([seed, epoch, position]).generate_state(1)[0])


def evaluate(model, clips, cfg, T_test=None):
    """``(mAP, detections)`` over ``clips`` using the configured inference settings."""
    dets = detect_clips(model, clips, T_test or cfg.T_test, cfg.test_stride, cfg.target_short,
                        cfg.inference_config())
    m, _ = mean_average_precision(dets, ground_truths(clips), cfg.iou_thresh, classes=range(cfg.num_classes))
    return m, dets


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_map: float | None
    checkpoint: str
    checkpoint_sha256: str
    lr: list = field(default_factory=list)


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def write_manifest(path, cfg, records, extra=None):
    body = {"config_sha256": cfg.digest(), "epochs": [
        {"epoch": r.epoch, "train_loss": r.train_loss,
         "val_map": None if r.val_map is None or math.isnan(r.val_map) else r.val_map,
         "checkpoint": r.checkpoint, "checkpoint_sha256": r.checkpoint_sha256, "lr": r.lr} for r in records]}
    if extra:
        body.update(extra)
    Path(path).write_text(json.dumps(body, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def train(cfg, train_clips, val_clips, out_dir, log=print, model=None):
    """Run the full schedule; writes per-epoch checkpoints, ``manifest.json`` and ``timings.json``.

    The manifest holds only deterministic quantities so identical (config, seed)
    runs produce identical bytes; wall-clock times go to ``timings.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not train_clips:
        raise ValueError("training split is empty")
    model = model or build_detector(cfg)
    if cfg.warm_start:
        model.load_state_dict(checkpoint.load(cfg.warm_start), strict=False)
    names = sorted(model.params)
    opt = ad.SGD([model.params[n] for n in names], momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    T = cfg.T_train if model.blend.order.uses_tcm else 1
    centers = [(ci, t) for ci, clip in enumerate(train_clips) for t in range(len(clip))]
    if val_clips and cfg.val_clips:
        val_clips = val_clips[:cfg.val_clips]
    anchors = {}
    records, timings = [], []
    iteration = 0
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(centers))
        losses, lrs = [], []
        for s in range(0, len(order), cfg.snippets_per_step):
            batch = order[s:s + cfg.snippets_per_step]
            opt.zero_grad()
            step_loss = 0.0
            for pos in batch:
                ci, t = centers[pos]
                aug_seed = snippet_seed(cfg.seed, epoch, int(pos))
                snip = prepare_snippet(train_clips[ci], t, cfg, T, aug_seed)
                key = snip.frames.shape[-2:]
                if key not in anchors:
                    anchors[key] = model.anchors(key[1], key[0])
                c = snip.center
                total, _, _ = detection_loss(model, snip.frames, snip.boxes[c], snip.labels[c], anchors[key])
                value = total.item()
                if not math.isfinite(value):
                    dump = out / f"nonfinite_epoch{epoch:02d}_iter{iteration:06d}.json"
                    dump.write_text(json.dumps({"epoch": epoch, "iteration": iteration, "clip": train_clips[ci].id,
                                                "center": t, "augment_seed": aug_seed, "loss": repr(value)},
                                               indent=1) + "\n", encoding="utf-8")
                    raise NonFiniteLossError(f"non-finite loss {value} at epoch {epoch}, iteration {iteration}; "
                                             f"batch details in {dump}", dump)
                scaled = ad.scale(total, 1.0 / len(batch)) if len(batch) > 1 else total
                scaled.backward()
                step_loss += value / len(batch)
            lr = learning_rate(iteration, epoch, cfg)
            opt.step(lr, cfg.grad_clip or None)
            lrs.append(lr)
            losses.append(step_loss)
            iteration += 1
        blob = checkpoint.dumps(model.state_dict())
        name = f"checkpoint_epoch{epoch:02d}.bin"
        (out / name).write_bytes(blob)
        val_map = evaluate(model, val_clips, cfg)[0] if val_clips else None
        records.append(EpochRecord(epoch, float(np.mean(losses)), val_map, name, _sha256(blob), lrs))
        write_manifest(out / "manifest.json", cfg, records)
        timings.append({"epoch": epoch, "seconds": time.perf_counter() - start})
        (out / "timings.json").write_text(json.dumps(timings, indent=1) + "\n", encoding="utf-8")
        val_text = "n/a" if val_map is None else f"{val_map:.4f}"
        log(f"epoch {epoch:2d}  loss {records[-1].train_loss:.5f}  val mAP {val_text}  "
            f"lr {lrs[-1]:.6g}  {timings[-1]['seconds']:.1f}s")
    return model, records
