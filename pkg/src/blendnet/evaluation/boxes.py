"""Box overlap and greedy non-maximum suppression.

Boxes are ``(x_min, y_min, x_max, y_max)`` in continuous pixel coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateBoxError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    clip_id: str
    frame: int
    box: tuple
    class_id: int
    score: float

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise DegenerateBoxError(f"degenerate detection box {self.box}")
        if not np.isfinite(self.score):
            raise ValueError(f"non-finite score {self.score}")


def _check(box):
    if not (box[0] < box[2] and box[1] < box[3]):
        raise DegenerateBoxError(f"degenerate box {tuple(box)}")


def iou(a, b):
    """Intersection over union of two boxes; 0 for disjoint boxes."""
    _check(a)
    _check(b)
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def iou_matrix(a, b):
    """Pairwise IoU between ``a[N, 4]`` and ``b[M, 4]``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return out


def nms_indices(boxes, scores, iou_thresh=0.5):
    """Greedy suppression; returns kept indices in descending score order.

    Ties in score are broken by the lower index.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    keep = []
    suppressed = np.zeros(len(scores), dtype=bool)
    overlaps = iou_matrix(boxes, boxes)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= overlaps[i] > iou_thresh
    return keep


def nms(dets, iou_thresh=0.5):
    """Per-class greedy NMS over :class:`Detection` objects."""
    dets = list(dets)
    kept = []
    for cls in sorted({d.class_id for d in dets}):
        idx = [i for i, d in enumerate(dets) if d.class_id == cls]
        boxes = [dets[i].box for i in idx]
        scores = [dets[i].score for i in idx]
        kept.extend(idx[k] for k in nms_indices(boxes, scores, iou_thresh))
    kept.sort(key=lambda i: (-dets[i].score, i))
    return [dets[i] for i in kept]
