"""Sequence-level augmentation and aspect-preserving letterbox resizing."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import cv2
import numpy as np

MIN_BOX_SIDE = 2.0


@dataclass(frozen=True)
class AugmentConfig:
    brightness: tuple = (0.7, 1.3)
    flip_prob: float = 0.5
    max_crop: float = 0.1  # fraction removed from each side, at most


@dataclass(frozen=True)
class AugmentParams:
    brightness: float = 1.0
    flip: bool = False
    crop: float = 0.0

    @classmethod
    def draw(cls, rng, config=AugmentConfig()):
        lo, hi = config.brightness
        return cls(brightness=float(rng.uniform(lo, hi)), flip=bool(rng.random() < config.flip_prob),
                   crop=float(rng.uniform(0.0, config.max_crop)))

    @property
    def is_identity(self):
        return self.brightness == 1.0 and not self.flip and self.crop == 0.0


def _crop_px(size, fraction):
    return int(math.floor(size * fraction))


def augment_boxes(boxes, width, height, params):
    """Apply flip and crop to ``boxes[k, 4]``; returns ``(boxes, keep_mask, new_w, new_h)``."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    if params.flip:
        b[:, [0, 2]] = width - b[:, [2, 0]]
    cx, cy = _crop_px(width, params.crop), _crop_px(height, params.crop)
    new_w, new_h = width - 2 * cx, height - 2 * cy
    if cx or cy:
        b -= [cx, cy, cx, cy]
        b[:, [0, 2]] = np.clip(b[:, [0, 2]], 0, new_w)
        b[:, [1, 3]] = np.clip(b[:, [1, 3]], 0, new_h)
    keep = ((b[:, 2] - b[:, 0]) >= MIN_BOX_SIDE) & ((b[:, 3] - b[:, 1]) >= MIN_BOX_SIDE)
    return b, keep, new_w, new_h


def augment(snippet, seed=None, params=None, config=AugmentConfig()):
    """Brightness, horizontal flip and central crop, drawn once for the whole snippet.

    Every frame and box gets the same decision. Boxes are clipped to the crop
    and dropped once either side falls below 2 px.
    """
    if params is None:
        params = AugmentParams.draw(np.random.default_rng(seed), config)
    if params.is_identity:
        return snippet
    frames = snippet.frames
    _, _, h, w = frames.shape
    if params.brightness != 1.0:
        frames = frames * params.brightness
    if params.flip:
        frames = frames[..., ::-1]
    cx, cy = _crop_px(w, params.crop), _crop_px(h, params.crop)
    frames = np.ascontiguousarray(frames[..., cy:h - cy, cx:w - cx])
    boxes, labels, vis = [], [], []
    for b, l, v in zip(snippet.boxes, snippet.labels, snippet.visibility):
        nb, keep, _, _ = augment_boxes(b, w, h, params)
        boxes.append(nb[keep])
        labels.append(np.asarray(l)[keep])
        vis.append(np.asarray(v)[keep])
    return replace(snippet, frames=frames, boxes=boxes, labels=labels, visibility=vis)


@dataclass(frozen=True)
class Letterbox:
    """Records an isotropic rescale followed by right/bottom zero padding."""

    scale: float
    src_w: int
    src_h: int
    out_w: int
    out_h: int

    def forward_boxes(self, boxes):
        return np.asarray(boxes, dtype=np.float64).reshape(-1, 4) * self.scale

    def inverse_boxes(self, boxes):
        """Map boxes from the letterboxed image back to source pixels, clipped to the source."""
        b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4) / self.scale
        b[:, [0, 2]] = np.clip(b[:, [0, 2]], 0, self.src_w)
        b[:, [1, 3]] = np.clip(b[:, [1, 3]], 0, self.src_h)
        return b


def _round_up(v, m):
    return int(math.ceil(v / m) * m)


def letterbox_geometry(src_w, src_h, target_short=128, pad_multiple=128):
    scale = target_short / min(src_w, src_h)
    rw, rh = int(round(src_w * scale)), int(round(src_h * scale))
    return Letterbox(scale, int(src_w), int(src_h), _round_up(rw, pad_multiple), _round_up(rh, pad_multiple)), (rw, rh)


def resize_letterbox(frame, boxes, target_short=128, pad_multiple=128):
    """Scale ``frame[C, H, W]`` so its short side is ``target_short``, then pad right/bottom.

    Returns ``(frame, boxes, Letterbox)``. Boxes are multiplied by the same
    scale; padding never moves them.
    """
    frame = np.asarray(frame, dtype=np.float64)
    c, h, w = frame.shape
    geo, (rw, rh) = letterbox_geometry(w, h, target_short, pad_multiple)
    if (rw, rh) == (w, h):
        resized = frame
    else:
        resized = cv2.resize(frame.transpose(1, 2, 0), (rw, rh), interpolation=cv2.INTER_LINEAR)
        resized = resized.reshape(rh, rw, c).transpose(2, 0, 1)
    if (geo.out_w, geo.out_h) == (rw, rh):
        out = np.ascontiguousarray(resized)
    else:
        out = np.zeros((c, geo.out_h, geo.out_w))
        out[:, :rh, :rw] = resized
    return out, geo.forward_boxes(boxes), geo


def letterbox_snippet(snippet, target_short=128, pad_multiple=128):
    """Letterbox every frame and box list of a snippet; returns ``(snippet, Letterbox)``."""
    out, geo = [], None
    for f in snippet.frames:
        img, _, geo = resize_letterbox(f, np.zeros((0, 4)), target_short, pad_multiple)
        out.append(img)
    boxes = [geo.forward_boxes(b) for b in snippet.boxes]
    return replace(snippet, frames=np.stack(out), boxes=boxes), geo
