"""Video clips with per-frame boxes, and temporal snippet sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class Box(NamedTuple):
    x0: float
    y0: float
    x1: float
    y1: float
    class_id: int = 0
    visibility: float = -1.0  # fraction of the object left unoccluded; -1 when unknown

    @property
    def xyxy(self):
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass
class VideoClip:
    """Frames as ``uint8 [N, H, W, 3]`` RGB plus one box list per frame."""

    id: str
    frames: np.ndarray
    annotations: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"clip {self.id}: frames must be [N, H, W, 3], got {self.frames.shape}")
        if not self.annotations:
            self.annotations = [[] for _ in range(len(self.frames))]
        if len(self.annotations) != len(self.frames):
            raise ValueError(f"clip {self.id}: {len(self.annotations)} annotation lists for {len(self.frames)} frames")

    def __len__(self):
        return len(self.frames)

    @property
    def width(self):
        return int(self.frames.shape[2])

    @property
    def height(self):
        return int(self.frames.shape[1])

    def frame(self, i):
        """Frame ``i`` as float ``[3, H, W]`` in [0, 1]."""
        return self.frames[i].transpose(2, 0, 1).astype(np.float64) / 255.0

    def boxes(self, i):
        """``(boxes[k, 4], labels[k], visibility[k])`` arrays for frame ``i``."""
        anns = self.annotations[i]
        boxes = np.array([b.xyxy for b in anns], dtype=np.float64).reshape(-1, 4)
        labels = np.array([b.class_id for b in anns], dtype=np.int64)
        vis = np.array([b.visibility for b in anns], dtype=np.float64)
        return boxes, labels, vis


@dataclass
class SnippetBatch:
    """``T`` frames around centre ``t``; ``frames`` is float ``[T, 3, H, W]``."""

    clip_id: str
    t: int
    indices: list
    frames: np.ndarray
    boxes: list  # per frame [k, 4]
    labels: list  # per frame [k]
    visibility: list  # per frame [k]
    stride: int = 1

    @property
    def T(self):
        return len(self.indices)

    @property
    def center(self):
        return len(self.indices) // 2


def snippet_indices(t, T, stride, length):
    """Frame indices ``t + stride*k`` for ``k`` in ``[-tau, tau]``, clamped to the clip."""
    if T < 1 or T % 2 == 0:
        raise ValueError(f"snippet length T must be odd and positive, got {T}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if not 0 <= t < length:
        raise IndexError(f"centre {t} outside clip of length {length}")
    tau = T // 2
    return [min(max(t + stride * k, 0), length - 1) for k in range(-tau, tau + 1)]


def sample_snippet(clip, t, T, stride=1):
    idx = snippet_indices(t, T, stride, len(clip))
    frames = np.stack([clip.frame(i) for i in idx])
    gts = [clip.boxes(i) for i in idx]
    return SnippetBatch(clip.id, t, idx, frames, [g[0] for g in gts], [g[1] for g in gts],
                        [g[2] for g in gts], stride)
