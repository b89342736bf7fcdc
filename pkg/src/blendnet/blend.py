"""Spatial (SCM) and temporal (TCM) context modules.

Both are residual self-attention blocks over a feature map ``x[C, H, W]``:

* SCM pools a softmax-weighted global context vector over all positions and
  adds its 1x1 transform back to every position.
* TCM normalises per-position attention logits across the T frames of a
  snippet, turns them into per-frame attention maps, and blends attended
  reference-frame features into the centre (main) frame.

Every embedding and transform is a bias-free 1x1 convolution.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


class InsertionPoint(str, enum.Enum):
    AFTER_ADD = "after_add"
    AFTER_1X1 = "after_1x1"
    AFTER_3X3 = "after_3x3"


class EmbeddingStrategy(str, enum.Enum):
    POSITIONAL = "positional"
    MAIN_AND_REFS = "main_and_refs"


class BlendOrder(str, enum.Enum):
    TCM_THEN_SCM = "tcm_then_scm"
    SCM_THEN_TCM = "scm_then_tcm"
    SCM_ONLY = "scm_only"
    TCM_ONLY = "tcm_only"
    NONE = "none"

    @property
    def uses_scm(self):
        return self in (BlendOrder.TCM_THEN_SCM, BlendOrder.SCM_THEN_TCM, BlendOrder.SCM_ONLY)

    @property
    def uses_tcm(self):
        return self in (BlendOrder.TCM_THEN_SCM, BlendOrder.SCM_THEN_TCM, BlendOrder.TCM_ONLY)


@dataclass(frozen=True)
class BlendConfig:
    T: int = 1
    insertion_point: InsertionPoint = InsertionPoint.AFTER_ADD
    embedding_strategy: EmbeddingStrategy = EmbeddingStrategy.MAIN_AND_REFS
    reduction_ratio: int = 4
    order: BlendOrder = BlendOrder.TCM_THEN_SCM

    def __post_init__(self):
        if self.T < 1 or self.T % 2 == 0:
            raise ValueError(f"temporal support T must be odd and >= 1, got {self.T}")
        if self.reduction_ratio < 1:
            raise ValueError("reduction_ratio must be >= 1")
        for name, kind in (("insertion_point", InsertionPoint),
                           ("embedding_strategy", EmbeddingStrategy), ("order", BlendOrder)):
            object.__setattr__(self, name, kind(getattr(self, name)))

    def check_channels(self, channels):
        if channels % self.reduction_ratio:
            raise ValueError(f"reduction ratio {self.reduction_ratio} does not divide {channels} channels")


def _normal(rng, shape, std, name):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, name=name)


@dataclass
class ScmWeights:
    w1: Tensor  # [1, C] attention logits
    w2: Tensor  # [C_e, C] value embedding
    w3: Tensor  # [C, C_e] output transform

    @classmethod
    def init(cls, channels, reduction_ratio=4, rng=None, std=0.01):
        if channels % reduction_ratio:
            raise ValueError(f"reduction ratio {reduction_ratio} does not divide {channels} channels")
        rng = rng if rng is not None else np.random.default_rng(0)
        ce = channels // reduction_ratio
        return cls(_normal(rng, (1, channels), std, "scm.w1"),
                   _normal(rng, (ce, channels), std, "scm.w2"),
                   _normal(rng, (channels, ce), std, "scm.w3"))

    @property
    def channels(self):
        return self.w1.shape[1]

    def named(self):
        return {"scm.w1": self.w1, "scm.w2": self.w2, "scm.w3": self.w3}


class TcmWeights:
    """Per-temporal-offset weight banks ``w4`` [1,C], ``w5`` [C,C], ``w6`` [C,C].

    Banks are keyed by the offset ``m - t`` from the main frame over the
    trained support. A wider test-time support reuses the bank of the nearest
    trained offset.
    """

    def __init__(self, w4, w5, w6):
        self.w4, self.w5, self.w6 = dict(w4), dict(w5), dict(w6)
        offsets = sorted(self.w4)
        if not offsets or offsets != sorted(self.w5) or offsets != sorted(self.w6):
            raise ValueError("w4/w5/w6 banks must cover the same offsets")
        tau = offsets[-1]
        if offsets != list(range(-tau, tau + 1)):
            raise ValueError(f"offsets must be contiguous and symmetric, got {offsets}")
        self.tau = tau

    @classmethod
    def init(cls, channels, T, rng=None, std=0.01):
        if T < 1 or T % 2 == 0:
            raise ValueError(f"T must be odd and >= 1, got {T}")
        rng = rng if rng is not None else np.random.default_rng(0)
        tau = T // 2
        w4, w5, w6 = {}, {}, {}
        for o in range(-tau, tau + 1):
            w4[o] = _normal(rng, (1, channels), std, f"tcm.w4.{o}")
            w5[o] = _normal(rng, (channels, channels), std, f"tcm.w5.{o}")
            w6[o] = _normal(rng, (channels, channels), std, f"tcm.w6.{o}")
        return cls(w4, w5, w6)

    @property
    def T(self):
        return 2 * self.tau + 1

    @property
    def channels(self):
        return self.w4[0].shape[1]

    def bank_offset(self, offset):
        return max(-self.tau, min(self.tau, offset))

    def resolve(self, T):
        """Weight lists ``(w4s, w5s, w6s)`` of length ``T``, centre at ``T // 2``."""
        if T < 1:
            raise ValueError("temporal support must be >= 1")
        if T % 2 == 0:
            raise ValueError(f"temporal support must be odd, got {T}")
        offsets = [self.bank_offset(o) for o in range(-(T // 2), T // 2 + 1)]
        return ([self.w4[o] for o in offsets], [self.w5[o] for o in offsets],
                [self.w6[o] for o in offsets])

    def named(self):
        out = {}
        for o in sorted(self.w4):
            out[f"tcm.w4.{o}"] = self.w4[o]
            out[f"tcm.w5.{o}"] = self.w5[o]
            out[f"tcm.w6.{o}"] = self.w6[o]
        return out


def scm_forward(x, w):
    """Spatial context blending of one map ``x[C, H, W]``."""
    if x.ndim != 3 or x.shape[0] != w.channels:
        raise ShapeError(f"scm: input {x.shape} does not match {w.channels}-channel weights")
    c, h, wid = x.shape
    logits = ad.reshape(ad.conv1x1(x, w.w1), (h * wid,))
    alpha = ad.softmax(logits, axis=0)
    values = ad.reshape(ad.conv1x1(x, w.w2), (w.w2.shape[0], h * wid))
    context = ad.matmul(values, alpha)
    return ad.broadcast_add(x, ad.matmul(w.w3, context))


def spatial_attention(x, w):
    """The SCM softmax weights over positions, shape ``[H*W]``."""
    c, h, wid = x.shape
    return ad.softmax(ad.reshape(ad.conv1x1(x, w.w1), (h * wid,)), axis=0)


def temporal_softmax(x_embed):
    """Normalise ``[T, H, W]`` embeddings across frames, independently per position."""
    if x_embed.ndim != 3 or x_embed.shape[0] == 0:
        raise ValueError(f"temporal_softmax needs a non-empty [T, H, W] input, got {x_embed.shape}")
    return ad.softmax(x_embed, axis=0)


def temporal_attention_map(weights, t):
    """Attention map of frame ``t``: its per-position weight times the frame's mean weight."""
    frame = ad.take(weights, t, axis=0)
    return ad.mul(frame, ad.mean_over(frame))


def tcm_forward(xs, w, strategy=EmbeddingStrategy.MAIN_AND_REFS, return_attention=False):
    """Blend a snippet of per-frame maps into the main (centre) frame.

    ``xs`` holds T maps ``[C, H, W]``. Under ``MAIN_AND_REFS`` the reference
    frames enter through ``stop_gradient``; under ``POSITIONAL`` every frame
    carries gradient. With ``return_attention`` the ``[T, H, W]`` attention
    maps are returned alongside the blended map.
    """
    T = len(xs)
    if T == 0:
        raise ValueError("tcm_forward needs at least one frame")
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"tcm: inconsistent frame shapes {sorted(shapes)}")
    (shape,) = shapes
    if len(shape) != 3:
        raise ShapeError(f"tcm: frames must be [C, H, W], got {shape}")
    c, h, wid = shape
    if c != w.channels:
        raise ShapeError(f"tcm: {c}-channel frames vs {w.channels}-channel weights")
    strategy = EmbeddingStrategy(strategy)
    t = T // 2
    frames = [x if (m == t or strategy is EmbeddingStrategy.POSITIONAL) else ad.stop_gradient(x)
              for m, x in enumerate(xs)]
    w4s, w5s, w6s = w.resolve(T)

    stacked = ad.reshape(ad.stack(frames), (T, c, h * wid))
    embed = ad.reshape(ad.matmul(ad.stack(w4s), stacked), (T, h, wid))
    weights = temporal_softmax(embed)
    flat = ad.reshape(weights, (T, h * wid))
    frame_mean = ad.reshape(ad.mean_over(flat, axes=1), (T, 1))
    attn = ad.mul(flat, frame_mean)
    context = ad.matmul(stacked, ad.reshape(attn, (T, h * wid, 1)))
    inner = ad.add(stacked, ad.matmul(ad.stack(w5s), context))
    mixed = ad.sum_(ad.matmul(ad.stack(w6s), inner), axes=0)
    out = ad.add(xs[t], ad.reshape(mixed, (c, h, wid)))
    if return_attention:
        return out, ad.reshape(attn, (T, h, wid))
    return out


def blend_block(features, scm, tcm, cfg):
    """Apply the configured SCM/TCM combination to the snippet's site features.

    ``features`` lists the per-frame maps at the insertion site, main frame at
    the centre. Returns the blended main-frame map.
    """
    cfg = cfg if isinstance(cfg, BlendConfig) else BlendConfig(**cfg)
    if len(features) % 2 == 0:
        raise ValueError(f"snippet length must be odd, got {len(features)}")
    main = features[len(features) // 2]
    order = cfg.order
    if order is BlendOrder.NONE:
        return main
    if order is BlendOrder.SCM_ONLY:
        return scm_forward(main, scm)
    if order is BlendOrder.TCM_ONLY:
        return tcm_forward(features, tcm, cfg.embedding_strategy)
    if order is BlendOrder.TCM_THEN_SCM:
        return scm_forward(tcm_forward(features, tcm, cfg.embedding_strategy), scm)
    return tcm_forward([scm_forward(f, scm) for f in features], tcm, cfg.embedding_strategy)
