"""Turning head outputs into scored boxes, and running a detector over whole clips."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..blend import BlendOrder, scm_forward, tcm_forward
from ..evaluation.boxes import Detection, nms_indices
from ..video.augment import letterbox_geometry, resize_letterbox
from ..video.clip import snippet_indices
from .model import len_support
from .targets import decode_boxes


@dataclass(frozen=True)
class InferenceConfig:
    score_floor: float = 0.05
    pre_nms_top_k: int = 1000
    nms_iou: float = 0.5
    max_detections: int = 100
    stem_batch: int = 8


def worker_count(default=1):
    """Worker pool size, capped by ``BLENDNET_THREADS`` when set."""
    raw = os.environ.get("BLENDNET_THREADS", "").strip()
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"BLENDNET_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError(f"BLENDNET_THREADS must be a positive integer, got {raw!r}")
    return min(default, n) if default else n


def postprocess(probs, deltas, anchors_cxcywh, img_w, img_h, cfg=InferenceConfig()):
    """Score floor, top-k, decode, clip to the image, per-class NMS, cap per frame.

    Returns ``[(box, class_id, score)]`` by descending score (anchor index on ties).
    """
    probs = np.asarray(probs, dtype=np.float64)
    n, a = probs.shape
    flat = probs.reshape(-1)
    cand = np.nonzero(flat > cfg.score_floor)[0]
    if len(cand) == 0:
        return []
    order = np.lexsort((cand, -flat[cand]))[:cfg.pre_nms_top_k]
    cand = cand[order]
    anchor_idx, cls = cand // a, cand % a
    scores = flat[cand]
    boxes = decode_boxes(anchors_cxcywh[anchor_idx], np.asarray(deltas)[anchor_idx])
    boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0.0, img_w)
    boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0.0, img_h)
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    keep = []
    for c in np.unique(cls[valid]):
        idx = np.nonzero(valid & (cls == c))[0]
        keep.extend(idx[nms_indices(boxes[idx], scores[idx], cfg.nms_iou)].tolist())
    keep.sort(key=lambda i: (-scores[i], int(cand[i])))
    keep = keep[:cfg.max_detections]
    return [(tuple(float(v) for v in boxes[i]), int(cls[i]), float(scores[i])) for i in keep]


def prepare_frames(clip, target_short=128):
    """Letterboxed float frames ``[N, 3, H', W']`` plus the shared geometry."""
    geo, _ = letterbox_geometry(clip.width, clip.height, target_short)
    frames = np.stack([resize_letterbox(clip.frame(i), np.zeros((0, 4)), target_short)[0]
                       for i in range(len(clip))])
    return frames, geo


def stem_features(model, frames, batch=8):
    """Backbone features of every frame, computed in chunks without a graph."""
    parts = []
    with ad.no_grad():
        for s in range(0, len(frames), batch):
            parts.append(model.stem(Tensor(frames[s:s + batch])))
    return {k: Tensor(np.concatenate([p[k].data for p in parts])) for k in parts[0]}


def detect_clip(model, clip, T_test=None, stride=1, target_short=128, cfg=InferenceConfig()):
    """Detections for every frame of ``clip``, each frame blended with its ``T_test`` window."""
    T = T_test or len_support(model.blend)
    if not model.blend.order.uses_tcm:
        T = 1
    frames, geo = prepare_frames(clip, target_short)
    feats = stem_features(model, frames, cfg.stem_batch)
    anchors = model.anchors(geo.out_w, geo.out_h).cxcywh
    out = []
    with ad.no_grad():
        for t in range(len(clip)):
            pyramid = model.pyramid_from_stem(feats, snippet_indices(t, T, stride, len(clip)))
            probs, deltas = model.head_forward(pyramid)
            for box, cls, score in postprocess(probs.data, deltas.data, anchors, geo.out_w, geo.out_h, cfg):
                b = geo.inverse_boxes([box])[0]
                if b[2] > b[0] and b[3] > b[1]:
                    out.append(Detection(clip.id, t, tuple(float(v) for v in b), cls, score))
    return out


def detect_clips(model, clips, T_test=None, stride=1, target_short=128, cfg=InferenceConfig(), workers=None):
    """Detections for several clips, fanned out over a thread pool; output order follows ``clips``."""
    workers = worker_count(workers or os.cpu_count() or 1)
    if workers <= 1 or len(clips) <= 1:
        return [d for c in clips for d in detect_clip(model, c, T_test, stride, target_short, cfg)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda c: detect_clip(model, c, T_test, stride, target_short, cfg), clips)
        return [d for part in parts for d in part]


def snippet_attention(model, feats, indices):
    """Temporal attention maps ``[T, H', W']`` of the snippet ``indices`` (main at the centre)."""
    order = model.blend.order
    if not order.uses_tcm:
        raise ValueError("no attention to visualize: blend order has no temporal module")
    with ad.no_grad():
        sites = [ad.take(feats["site"], i, axis=0) for i in indices]
        if order is BlendOrder.SCM_THEN_TCM:
            sites = [scm_forward(s, model.scm) for s in sites]
        _, attn = tcm_forward(sites, model.tcm, model.blend.embedding_strategy, return_attention=True)
    return attn.data
