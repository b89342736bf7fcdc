"""Anchor generation: 3 scales x 3 aspect ratios per location on P3..P7."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff.ops import conv_out_size

LEVELS = (3, 4, 5, 6, 7)
REFERENCE_SHORT_SIDE = 512


@dataclass(frozen=True)
class AnchorSpec:
    """Per-level base side lengths plus the shared scale and ratio sets.

    ``ratios`` are width/height. The default bases are 32..512 pixels at a
    512-pixel short side, scaled linearly with the actual input size.
    """

    base_sizes: tuple = (32.0, 64.0, 128.0, 256.0, 512.0)
    scales: tuple = (2.0 ** 0, 2.0 ** (1 / 3), 2.0 ** (2 / 3))
    ratios: tuple = (0.5, 1.0, 2.0)
    levels: tuple = LEVELS

    @classmethod
    def for_short_side(cls, short_side):
        factor = short_side / REFERENCE_SHORT_SIDE
        return cls(base_sizes=tuple(32.0 * 2 ** k * factor for k in range(5)))

    @property
    def per_location(self):
        return len(self.scales) * len(self.ratios)

    def shapes(self, level):
        """``[(w, h)]`` of the anchors at one location, scale-major order."""
        area = self.base_sizes[self.levels.index(level)] ** 2
        out = []
        for s in self.scales:
            for ar in self.ratios:
                h = np.sqrt(area / ar)
                out.append((s * h * ar, s * h))
        return out


def level_sizes(img_h, img_w, levels=LEVELS):
    """Feature map sizes ``{level: (h, w)}`` produced by repeated stride-2 3x3 convs."""
    sizes = {}
    h, w = img_h, img_w
    for level in range(1, max(levels) + 1):
        h, w = conv_out_size(h, 2, 1), conv_out_size(w, 2, 1)
        if level in levels:
            sizes[level] = (h, w)
    return sizes


@dataclass
class AnchorSet:
    spec: AnchorSpec
    sizes: dict  # level -> (h, w)
    centers: dict = field(default_factory=dict)  # level -> [n, 4] (cx, cy, w, h)

    @property
    def cxcywh(self):
        return np.concatenate([self.centers[l] for l in self.spec.levels])

    @property
    def xyxy(self):
        a = self.cxcywh
        return np.stack([a[:, 0] - a[:, 2] / 2, a[:, 1] - a[:, 3] / 2,
                         a[:, 0] + a[:, 2] / 2, a[:, 1] + a[:, 3] / 2], axis=1)

    def count(self, level=None):
        if level is not None:
            return len(self.centers[level])
        return sum(len(v) for v in self.centers.values())


def generate_anchors(img_w, img_h, spec=None):
    """Anchors for every level, ordered (level, y, x, scale, ratio).

    Each anchor is centred on its feature cell mapped to pixel coordinates:
    ``((x + 0.5) * stride, (y + 0.5) * stride)`` with ``stride = 2 ** level``.
    """
    spec = spec or AnchorSpec.for_short_side(min(img_w, img_h))
    sizes = level_sizes(img_h, img_w, spec.levels)
    anchors = AnchorSet(spec=spec, sizes=sizes)
    for level in spec.levels:
        h, w = sizes[level]
        stride = 2 ** level
        shapes = np.array(spec.shapes(level))
        ys, xs = np.meshgrid((np.arange(h) + 0.5) * stride, (np.arange(w) + 0.5) * stride, indexing="ij")
        k = len(shapes)
        cx = np.repeat(xs.reshape(-1), k)
        cy = np.repeat(ys.reshape(-1), k)
        wh = np.tile(shapes, (h * w, 1))
        anchors.centers[level] = np.stack([cx, cy, wh[:, 0], wh[:, 1]], axis=1)
    return anchors
