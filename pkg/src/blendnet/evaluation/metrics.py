"""Detection matching, precision-recall curves, AP/mAP and occlusion-stratified recall."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .boxes import iou_matrix

VISIBILITY_BINS = ((0.0, 0.3), (0.3, 0.7), (0.7, 1.0))


@dataclass(frozen=True)
class GroundTruth:
    clip_id: str
    frame: int
    box: tuple
    class_id: int = 0
    visibility: float = -1.0


@dataclass
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    num_gt: int
    num_det: int


def _ranked(dets):
    """Detection indices by descending score, lower index first among ties."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def match_detections(dets, gts, iou_thresh=0.5):
    """Greedy matching in rank order.

    Each detection takes the unmatched same-frame, same-class GT with the
    highest IoU (lowest GT index on ties) if that IoU reaches ``iou_thresh``.
    Returns ``(order, is_tp, gt_index)`` where the last two follow ``order``.
    """
    by_frame = defaultdict(list)
    for g_idx, g in enumerate(gts):
        by_frame[(g.clip_id, g.frame, g.class_id)].append(g_idx)
    taken = np.zeros(len(gts), dtype=bool)
    order = _ranked(dets)
    is_tp = np.zeros(len(order), dtype=bool)
    matched = np.full(len(order), -1, dtype=np.int64)
    for rank, d_idx in enumerate(order):
        d = dets[d_idx]
        cands = [g for g in by_frame.get((d.clip_id, d.frame, d.class_id), ()) if not taken[g]]
        if not cands:
            continue
        ious = iou_matrix([d.box], [gts[g].box for g in cands])[0]
        best = int(np.argmax(ious))
        if ious[best] >= iou_thresh:
            taken[cands[best]] = True
            is_tp[rank] = True
            matched[rank] = cands[best]
    return order, is_tp, matched


def _area(recall, precision):
    """All-point area under the monotone precision envelope."""
    env = np.array(precision, dtype=np.float64)
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    ap, prev = 0.0, 0.0
    for r, p in zip(recall, env):
        ap += (r - prev) * p
        prev = r
    return float(ap)


def average_precision(dets, gts, iou_thresh=0.5):
    """AP of one class: area under the all-point interpolated PR curve.

    Detections sharing a score enter the curve together, so the result does
    not depend on their input order beyond which GTs they claim. With neither
    GTs nor detections the AP is NaN.
    """
    dets, gts = list(dets), list(gts)
    if not gts and not dets:
        return PrCurve(np.zeros(0), np.zeros(0), math.nan, 0, 0)
    if not dets or not gts:
        return PrCurve(np.zeros(0), np.zeros(0), 0.0, len(gts), len(dets))
    order, is_tp, _ = match_detections(dets, gts, iou_thresh)
    scores = [dets[i].score for i in order]
    recall, precision = [], []
    tp = fp = 0
    for k, hit in enumerate(is_tp):
        tp += int(hit)
        fp += int(not hit)
        if k + 1 < len(scores) and scores[k + 1] == scores[k]:
            continue  # close the tie group before emitting a point
        recall.append(tp / len(gts))
        precision.append(tp / (tp + fp))
    return PrCurve(np.array(recall), np.array(precision), _area(recall, precision), len(gts), len(dets))


def threshold_sweep_ap(dets, gts, iou_thresh=0.5):
    """Reference AP: rematch from scratch at every distinct score threshold."""
    dets, gts = list(dets), list(gts)
    if not gts and not dets:
        return math.nan
    if not dets or not gts:
        return 0.0
    points = []
    for s in sorted({d.score for d in dets}, reverse=True):
        kept = [d for d in dets if d.score >= s]
        _, is_tp, _ = match_detections(kept, gts, iou_thresh)
        tp = int(is_tp.sum())
        points.append((tp / len(gts), tp / len(kept)))
    ap, prev = 0.0, 0.0
    for r, _ in points:
        best = max(p for rr, p in points if rr >= r)
        ap += (r - prev) * best
        prev = r
    return float(ap)


def mean_average_precision(dets, gts, iou_thresh=0.5, classes=None):
    """``(mAP, {class_id: PrCurve})``; classes with NaN AP are left out of the mean."""
    dets, gts = list(dets), list(gts)
    if classes is None:
        classes = sorted({d.class_id for d in dets} | {g.class_id for g in gts})
    curves = {c: average_precision([d for d in dets if d.class_id == c], [g for g in gts if g.class_id == c],
                                   iou_thresh) for c in classes}
    valid = [c.ap for c in curves.values() if not math.isnan(c.ap)]
    return (float(np.mean(valid)) if valid else math.nan), curves


@dataclass
class StratumRow:
    low: float
    high: float
    num_gt: int
    recalled: int

    @property
    def recall(self):
        return self.recalled / self.num_gt if self.num_gt else None

    @property
    def label(self):
        close = "]" if self.high >= 1.0 else ")"
        return f"[{self.low:.1f}, {self.high:.1f}{close}"


def _bin_of(v, bins):
    for k, (lo, hi) in enumerate(bins):
        if lo <= v < hi or (hi >= 1.0 and v == hi):
            return k
    return None


def stratified_report(dets, gts, bins=VISIBILITY_BINS, score_thresh=0.5, iou_thresh=0.5):
    """Recall of detections scoring at least ``score_thresh``, per GT visibility bin.

    GTs with unknown visibility (negative) are skipped; empty bins report a
    recall of ``None``.
    """
    gts = list(gts)
    kept = [d for d in dets if d.score >= score_thresh]
    _, is_tp, matched = match_detections(kept, gts, iou_thresh)
    hit = np.zeros(len(gts), dtype=bool)
    hit[matched[is_tp]] = True
    rows = [StratumRow(lo, hi, 0, 0) for lo, hi in bins]
    for g, h in zip(gts, hit):
        k = _bin_of(g.visibility, bins) if g.visibility >= 0 else None
        if k is None:
            continue
        rows[k].num_gt += 1
        rows[k].recalled += int(h)
    return rows
