"""Desk-scale feature-pyramid detector with SCM/TCM blending in its last block.

Backbone: five stride-2 stages (a small stand-in for a ResNet). Stage five
is a bottleneck residual block whose three candidate blending sites are
after its 3x3 conv, after its closing 1x1 conv, and after the residual
addition. A FPN builds P3..P7 and a RetinaNet-style head with weights
shared across levels predicts 9 anchors per location.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import ShapeError, Tensor
from ..blend import BlendConfig, BlendOrder, EmbeddingStrategy, InsertionPoint, ScmWeights, TcmWeights, blend_block
from .anchors import LEVELS, AnchorSpec, generate_anchors

MIN_INPUT = 64
STRIDES = {level: 2 ** level for level in LEVELS}


class MissingRecordError(KeyError):
    """A checkpoint and a model disagree on which records exist."""

    def __str__(self):
        return str(self.args[0])


@dataclass(frozen=True)
class DetectorConfig:
    backbone_channels: tuple = (16, 32, 64, 128, 128)
    width: int = 64  # FPN and head channels
    num_classes: int = 1
    head_convs: int = 4
    prior: float = 0.01
    bottleneck_ratio: int = 4
    head_init_std: float = 0.01  # final cls/box layers
    pixel_mean: float = 0.5  # fixed input normalisation in place of batch statistics
    pixel_std: float = 0.25
    anchor_scales: tuple = (2.0 ** 0, 2.0 ** (1 / 3), 2.0 ** (2 / 3))
    anchor_ratios: tuple = (0.5, 1.0, 2.0)
    anchor_base_sizes: tuple | None = None  # None: 32..512 scaled to the input
    fg_iou: float = 0.5
    bg_iou: float = 0.4
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1.0 / 9

    def __post_init__(self):
        object.__setattr__(self, "backbone_channels", tuple(int(c) for c in self.backbone_channels))
        if len(self.backbone_channels) != 5:
            raise ValueError("backbone needs exactly five stage widths")

    def anchor_spec(self, img_w, img_h):
        base = AnchorSpec.for_short_side(min(img_w, img_h)).base_sizes
        if self.anchor_base_sizes is not None:
            base = tuple(float(b) for b in self.anchor_base_sizes)
        return AnchorSpec(base_sizes=base, scales=tuple(self.anchor_scales), ratios=tuple(self.anchor_ratios))

    @property
    def anchors_per_location(self):
        return len(self.anchor_scales) * len(self.anchor_ratios)


@dataclass
class PyramidFeatures:
    levels: dict  # level -> Tensor [C, H_l, W_l]
    strides: dict = field(default_factory=lambda: dict(STRIDES))


class Detector:
    """Parameters plus forward passes; all weights live in ``self.params``."""

    def __init__(self, config=None, blend=None, seed=0):
        self.config = config or DetectorConfig()
        self.blend = blend or BlendConfig()
        self.params = {}
        rng = np.random.default_rng(seed)
        self._build(rng)

    # ------------------------------------------------------------ parameters

    def _add(self, name, array):
        t = Tensor(array, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _conv(self, rng, name, cout, cin, k, std=None, bias=True, bias_value=0.0):
        fan_in = cin * k * k
        std = math.sqrt(2.0 / fan_in) if std is None else std
        shape = (cout, cin, k, k) if k == 3 else (cout, cin)
        self._add(f"{name}.w", rng.normal(0.0, std, size=shape))
        if bias:
            self._add(f"{name}.b", np.full(cout, bias_value))

    def _build(self, rng):
        cfg = self.config
        c1, c2, c3, c4, c5 = cfg.backbone_channels
        mid = max(1, c5 // cfg.bottleneck_ratio)
        # backbone: He-normal stand-in for pretrained weights
        self._conv(rng, "backbone.stage1", c1, 3, 3)
        self._conv(rng, "backbone.stage2", c2, c1, 3)
        self._conv(rng, "backbone.stage3", c3, c2, 3)
        self._conv(rng, "backbone.stage4", c4, c3, 3)
        self._conv(rng, "backbone.stage5.reduce", mid, c4, 1)
        self._conv(rng, "backbone.stage5.conv3x3", mid, mid, 3)
        self._conv(rng, "backbone.stage5.expand", c5, mid, 1)
        self._conv(rng, "backbone.stage5.shortcut", c5, c4, 1)

        # FPN and head towers: He-normal as well; N(0, 0.01) through four
        # 64-wide layers would shrink the signal ~6x per layer
        f, std = cfg.width, cfg.head_init_std
        self._conv(rng, "fpn.lat3", f, c3, 1)
        self._conv(rng, "fpn.lat4", f, c4, 1)
        self._conv(rng, "fpn.lat5", f, c5, 1)
        for level in (3, 4, 5):
            self._conv(rng, f"fpn.smooth{level}", f, f, 3)
        self._conv(rng, "fpn.p6", f, c5, 3)
        self._conv(rng, "fpn.p7", f, f, 3)

        k = cfg.anchors_per_location
        for tower in ("cls", "box"):
            for i in range(cfg.head_convs):
                self._conv(rng, f"head.{tower}.{i}", f, f, 3)
        prior_bias = -math.log((1.0 - cfg.prior) / cfg.prior)
        self._conv(rng, "head.cls.out", k * cfg.num_classes, f, 3, std=std, bias_value=prior_bias)
        self._conv(rng, "head.box.out", k * 4, f, 3, std=std)

        self.site_channels = {InsertionPoint.AFTER_3X3: mid, InsertionPoint.AFTER_1X1: c5,
                              InsertionPoint.AFTER_ADD: c5}
        channels = self.site_channels[self.blend.insertion_point]
        self.scm = ScmWeights.init(channels, self.blend.reduction_ratio, rng=rng)
        self.tcm = TcmWeights.init(channels, self.blend.T, rng=rng)
        if self.blend.order.uses_scm:
            self.params.update(self.scm.named())
        if self.blend.order.uses_tcm:
            self.params.update(self.tcm.named())

    def state_dict(self):
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, arrays, strict=True):
        """Copy arrays into the parameters; raises on the first mismatched record."""
        for name in sorted(set(self.params) | set(arrays)):
            if name not in arrays:
                if strict:
                    raise MissingRecordError(f"checkpoint lacks record {name!r}")
                continue
            if name not in self.params:
                if strict:
                    raise MissingRecordError(f"checkpoint record {name!r} has no matching parameter")
                continue
            if self.params[name].data.shape != arrays[name].shape:
                raise ShapeError(f"record {name!r}: checkpoint shape {arrays[name].shape} "
                                 f"!= model shape {self.params[name].data.shape}")
            self.params[name].data[...] = arrays[name]

    # ------------------------------------------------------------ forward pieces

    def _c(self, x, name, stride=1, relu=True):
        p = self.params
        out = ad.conv3x3(x, p[f"{name}.w"], stride, 1, p[f"{name}.b"])
        return ad.relu(out) if relu else out

    def _c1(self, x, name):
        p = self.params
        return ad.conv1x1(x, p[f"{name}.w"], p[f"{name}.b"])

    def stem(self, frames, site=None):
        """Run the backbone on ``frames[N, 3, H, W]`` up to the insertion site.

        Returns a dict of batched tensors: ``c3``, ``c4``, ``shortcut`` and
        ``site`` (the features at the configured insertion point).
        """
        site = InsertionPoint(site or self.blend.insertion_point)
        data = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
        x = Tensor((data - self.config.pixel_mean) / self.config.pixel_std)
        if x.ndim != 4:
            raise ShapeError(f"stem expects [N, 3, H, W] frames, got {x.shape}")
        h, w = x.shape[-2:]
        if h < MIN_INPUT or w < MIN_INPUT:
            raise ShapeError(f"frames must be at least {MIN_INPUT}x{MIN_INPUT}, got {h}x{w}")
        x = self._c(x, "backbone.stage1", 2)
        x = self._c(x, "backbone.stage2", 2)
        x = self._c(x, "backbone.stage3", 2)
        c3 = x
        x = self._c(x, "backbone.stage4", 2)
        c4 = x
        shortcut = self._c1(ad.subsample2(c4), "backbone.stage5.shortcut")
        a = ad.relu(self._c1(c4, "backbone.stage5.reduce"))
        b = self._c(a, "backbone.stage5.conv3x3", 2)
        feats = {"c3": c3, "c4": c4, "shortcut": shortcut}
        if site is InsertionPoint.AFTER_3X3:
            feats["site"] = b
            return feats
        c = self._c1(b, "backbone.stage5.expand")
        if site is InsertionPoint.AFTER_1X1:
            feats["site"] = c
            return feats
        feats["site"] = ad.relu(ad.add(c, shortcut))
        return feats

    def finish_block(self, blended, shortcut, site=None):
        """Complete the last residual block from the blended site features."""
        site = InsertionPoint(site or self.blend.insertion_point)
        if site is InsertionPoint.AFTER_ADD:
            return blended
        if site is InsertionPoint.AFTER_3X3:
            blended = self._c1(blended, "backbone.stage5.expand")
        return ad.relu(ad.add(blended, shortcut))

    def fpn(self, c3, c4, c5):
        lat5 = self._c1(c5, "fpn.lat5")
        lat4 = ad.add(self._c1(c4, "fpn.lat4"), ad.upsample2(lat5, c4.shape[-2:]))
        lat3 = ad.add(self._c1(c3, "fpn.lat3"), ad.upsample2(lat4, c3.shape[-2:]))
        p6 = self._c(c5, "fpn.p6", 2, relu=False)
        p7 = self._c(ad.relu(p6), "fpn.p7", 2, relu=False)
        levels = {3: self._c(lat3, "fpn.smooth3", relu=False), 4: self._c(lat4, "fpn.smooth4", relu=False),
                  5: self._c(lat5, "fpn.smooth5", relu=False), 6: p6, 7: p7}
        return PyramidFeatures(levels)

    def pyramid_from_stem(self, feats, indices, T=None):
        """Blend the frames ``indices`` (main at the centre) and build its pyramid.

        ``feats`` are batched stem outputs; ``indices`` select the snippet's
        frames from the batch in temporal order.
        """
        cfg = self.blend
        if T is not None and len(indices) != T:
            raise ValueError(f"expected {T} frame indices, got {len(indices)}")
        main = indices[len(indices) // 2]
        if cfg.order is BlendOrder.NONE:
            site_frames = [ad.take(feats["site"], main, axis=0)]
        elif cfg.order.uses_tcm:
            site_frames = [ad.take(feats["site"], i, axis=0) for i in indices]
        else:
            site_frames = [ad.take(feats["site"], main, axis=0)]
        return self._pyramid_from_sites(site_frames, feats, main)

    def _pyramid_from_sites(self, site_frames, feats, main):
        blended = blend_block(site_frames, self.scm, self.tcm, self.blend)
        c5 = self.finish_block(blended, ad.take(feats["shortcut"], main, axis=0))
        return self.fpn(ad.take(feats["c3"], main, axis=0), ad.take(feats["c4"], main, axis=0), c5)

    def backbone_forward(self, frames, mains=None, T=None):
        """Per-frame pyramids for a snippet ``frames[T, 3, H, W]``.

        Frame ``k`` is blended with the window ``k - tau .. k + tau`` of the
        snippet, indices clamped to the snippet. ``mains`` restricts which
        frames get a pyramid (default: all); ``T`` overrides the support.
        """
        frames = np.asarray(frames.data if isinstance(frames, Tensor) else frames, dtype=np.float64)
        n = len(frames)
        feats = self.stem(Tensor(frames))
        tau = (T or len_support(self.blend)) // 2
        mains = range(n) if mains is None else mains
        out = []
        for k in mains:
            idx = [min(max(k + o, 0), n - 1) for o in range(-tau, tau + 1)]
            out.append(self.pyramid_from_stem(feats, idx))
        return out

    def snippet_pyramid(self, frames):
        """Pyramid of the centre frame of ``frames[T, 3, H, W]`` (training path).

        Under the main-and-refs strategy the reference frames run through the
        backbone without recording a graph, since no gradient reaches them.
        """
        frames = np.asarray(frames, dtype=np.float64)
        n = len(frames)
        if n % 2 == 0:
            raise ValueError(f"snippet length must be odd, got {n}")
        t = n // 2
        cfg = self.blend
        if not cfg.order.uses_tcm or n == 1:
            return self.pyramid_from_stem(self.stem(Tensor(frames[t:t + 1])), [0])
        if cfg.embedding_strategy is EmbeddingStrategy.POSITIONAL:
            return self.pyramid_from_stem(self.stem(Tensor(frames)), list(range(n)))
        main = self.stem(Tensor(frames[t:t + 1]))
        others = [i for i in range(n) if i != t]
        with ad.no_grad():
            refs = self.stem(Tensor(frames[others]))["site"]
        refs = ad.stop_gradient(refs)  # explicit cut, so pinned finite differences see it
        sites = [ad.take(refs, others.index(i), axis=0) if i != t else ad.take(main["site"], 0, axis=0)
                 for i in range(n)]
        return self._pyramid_from_sites(sites, main, 0)

    def head_forward(self, pyramid):
        """Per-anchor class probabilities ``[N, A]`` and box deltas ``[N, 4]``.

        Anchors are ordered (level, y, x, anchor) matching :func:`generate_anchors`.
        """
        logits, deltas = self.head_logits(pyramid)
        return ad.sigmoid(logits), deltas

    def _cl(self, x, sizes, name, relu=True):
        p = self.params
        out = ad.conv3x3_levels(x, sizes, p[f"{name}.w"], p[f"{name}.b"])
        return ad.relu(out) if relu else out

    def head_logits(self, pyramid):
        """Logits ``[N, A]`` and deltas ``[N, 4]``; every level runs through one shared matmul per layer."""
        cfg = self.config
        k, a = cfg.anchors_per_location, cfg.num_classes
        sizes = [pyramid.levels[level].shape[-2:] for level in LEVELS]
        flat = ad.concat([ad.reshape(pyramid.levels[level], (cfg.width, h * w))
                          for level, (h, w) in zip(LEVELS, sizes)], axis=1)
        total = flat.shape[1]
        outputs = []
        for tower, channels in (("cls", a), ("box", 4)):
            x = flat
            for i in range(cfg.head_convs):
                x = self._cl(x, sizes, f"head.{tower}.{i}")
            x = self._cl(x, sizes, f"head.{tower}.out", relu=False)
            outputs.append(ad.reshape(ad.transpose(x, (1, 0)), (total * k, channels)))
        return outputs[0], outputs[1]

    def forward_image(self, image):
        """Single-frame path: one image ``[3, H, W]`` through backbone, FPN and head."""
        image = np.asarray(image, dtype=np.float64)
        feats = self.stem(Tensor(image[None]))
        blended = blend_block([ad.take(feats["site"], 0, axis=0)], self.scm, self.tcm, self.blend)
        c5 = self.finish_block(blended, ad.take(feats["shortcut"], 0, axis=0))
        pyramid = self.fpn(ad.take(feats["c3"], 0, axis=0), ad.take(feats["c4"], 0, axis=0), c5)
        return self.head_forward(pyramid)

    def anchors(self, img_w, img_h):
        return generate_anchors(img_w, img_h, self.config.anchor_spec(img_w, img_h))


def len_support(blend):
    return blend.T if blend.order.uses_tcm else 1
