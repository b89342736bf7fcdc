"""Anchor-to-ground-truth assignment and the log-space box encoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..evaluation.boxes import iou_matrix

BACKGROUND = -1
IGNORE = -2


@dataclass
class DetectionTargets:
    labels: np.ndarray  # [N] class id, BACKGROUND or IGNORE
    box_targets: np.ndarray  # [N, 4]; rows meaningful only for foreground
    matched_gt: np.ndarray  # [N] index of the best-overlap GT, -1 without GT

    @property
    def foreground(self):
        return self.labels >= 0

    @property
    def num_foreground(self):
        return int(self.foreground.sum())


def xyxy_to_cxcywh(boxes):
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    return np.stack([boxes[:, 0] + w / 2, boxes[:, 1] + h / 2, w, h], axis=1)


def encode(anchors_cxcywh, gt_xyxy):
    """Offsets ``(dx, dy, dw, dh)`` of GT boxes relative to anchors."""
    a = np.asarray(anchors_cxcywh, dtype=np.float64).reshape(-1, 4)
    g = xyxy_to_cxcywh(gt_xyxy)
    return np.stack([(g[:, 0] - a[:, 0]) / a[:, 2], (g[:, 1] - a[:, 1]) / a[:, 3],
                     np.log(g[:, 2] / a[:, 2]), np.log(g[:, 3] / a[:, 3])], axis=1)


def decode_boxes(anchors_cxcywh, deltas, max_log_scale=np.log(1000.0 / 16)):
    """Inverse of :func:`encode`, returning ``xyxy`` boxes."""
    a = np.asarray(anchors_cxcywh, dtype=np.float64).reshape(-1, 4)
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    cx = a[:, 0] + d[:, 0] * a[:, 2]
    cy = a[:, 1] + d[:, 1] * a[:, 3]
    w = a[:, 2] * np.exp(np.minimum(d[:, 2], max_log_scale))
    h = a[:, 3] * np.exp(np.minimum(d[:, 3], max_log_scale))
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)


def assign_targets(anchors, gt_boxes, gt_labels=None, fg_iou=0.5, bg_iou=0.4):
    """Label anchors foreground / background / ignore by IoU with the GT boxes.

    Each anchor takes its best-overlap GT: IoU >= ``fg_iou`` is foreground,
    IoU < ``bg_iou`` background, anything between is ignored. Every GT also
    claims its single highest-IoU anchor (lowest index on ties).
    ``anchors`` is an :class:`AnchorSet` or an ``[N, 4]`` cx/cy/w/h array.
    """
    a = anchors.cxcywh if hasattr(anchors, "cxcywh") else np.asarray(anchors, dtype=np.float64)
    n = len(a)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_labels = np.zeros(len(gt), dtype=np.int64) if gt_labels is None else np.asarray(gt_labels, dtype=np.int64)
    labels = np.full(n, BACKGROUND, dtype=np.int64)
    targets = np.zeros((n, 4))
    matched = np.full(n, -1, dtype=np.int64)
    if len(gt) == 0:
        return DetectionTargets(labels, targets, matched)

    a_xyxy = np.stack([a[:, 0] - a[:, 2] / 2, a[:, 1] - a[:, 3] / 2,
                       a[:, 0] + a[:, 2] / 2, a[:, 1] + a[:, 3] / 2], axis=1)
    overlaps = iou_matrix(a_xyxy, gt)
    best_gt = overlaps.argmax(axis=1)
    best_iou = overlaps[np.arange(n), best_gt]
    matched[:] = best_gt
    fg = best_iou >= fg_iou
    labels[(best_iou >= bg_iou) & ~fg] = IGNORE
    for g in range(len(gt)):
        col = overlaps[:, g]
        top = int(np.argmax(col))
        if col[top] > 0:
            fg[top] = True
            matched[top] = g
    labels[fg] = gt_labels[matched[fg]]
    if fg.any():
        targets[fg] = encode(a[fg], gt[matched[fg]])
    return DetectionTargets(labels, targets, matched)
