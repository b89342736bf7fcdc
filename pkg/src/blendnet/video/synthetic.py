"""Deterministic synthetic camera-trap clips with occluders and lighting drift.

Each clip shows one to three dark, textured ellipses moving along smooth
random walks over a low-contrast textured background. Static vertical
strips (tree trunks) are drawn over them. Ground truth keeps the full object
extent even while an object is completely hidden, and records the fraction
of its pixels not covered by the strips. Objects passing in front of each
other do not lower that fraction.
"""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .clip import Box, VideoClip


@dataclass(frozen=True)
class SynthConfig:
    num_clips: int = 40
    frames_per_clip: int = 40
    width: int = 128
    height: int = 128
    objects: tuple = (1, 3)  # inclusive count range per clip
    object_size: tuple = (18.0, 40.0)  # box side range in pixels
    speed: tuple = (2.5, 4.0)  # pixels per frame
    occluder_density: float = 0.35  # target fraction of columns covered by strips
    occluder_width: tuple = (12, 30)
    lighting_jitter: float = 0.04  # std of the per-frame brightness random walk
    camouflage: float = 0.35  # relative darkening of objects against the background
    noise: float = 0.01
    seed: int = 0
    stream: int = 0  # separates splits generated from the same seed
    id_prefix: str = "clip"

    def __post_init__(self):
        if self.num_clips < 1:
            raise ValueError("num_clips must be at least 1")
        if self.frames_per_clip < 1:
            raise ValueError("frames_per_clip must be at least 1")
        lo, hi = self.objects
        if not 0 <= lo <= hi:
            raise ValueError(f"bad object count range {self.objects}")
        if max(self.object_size) >= min(self.width, self.height):
            raise ValueError("objects must be smaller than the frame")
        if not 0.0 <= self.occluder_density < 1.0:
            raise ValueError("occluder_density must be in [0, 1)")


def _smooth_noise(rng, h, w, cells, channels=1):
    coarse = rng.standard_normal((cells, cells, channels)).astype(np.float64)
    fine = cv2.resize(coarse, (w, h), interpolation=cv2.INTER_CUBIC)
    return fine.reshape(h, w, channels)


def _occluder_mask(rng, cfg):
    """Column mask of vertical strips separated by gaps sized to hit the target density."""
    mask = np.zeros(cfg.width, dtype=bool)
    d = cfg.occluder_density
    if d <= 0:
        return mask
    mean_w = (cfg.occluder_width[0] + cfg.occluder_width[1]) / 2
    mean_gap = mean_w * (1 - d) / d
    x = int(rng.uniform(0, mean_gap))
    while x < cfg.width:
        sw = int(rng.integers(cfg.occluder_width[0], cfg.occluder_width[1] + 1))
        mask[x:x + sw] = True
        x += sw + max(1, int(round(rng.uniform(0.5, 1.5) * mean_gap)))
    return mask


class _Mover:
    def __init__(self, rng, cfg):
        self.w = float(rng.uniform(*cfg.object_size))
        self.h = float(rng.uniform(*cfg.object_size))
        self.cx = float(rng.uniform(self.w / 2, cfg.width - self.w / 2))
        self.cy = float(rng.uniform(self.h / 2, cfg.height - self.h / 2))
        self.speed = float(rng.uniform(*cfg.speed))
        # mostly horizontal motion so objects pass behind the vertical strips
        self.vx = self.speed * (1.0 if rng.random() < 0.5 else -1.0)
        self.vy = float(rng.uniform(-0.3, 0.3)) * self.speed
        self.tone = float(rng.uniform(0.85, 1.15))
        self.texture = _smooth_noise(rng, 64, 64, 6)[..., 0]

    def step(self, rng, cfg):
        limit = 0.4 * self.speed
        self.vy = float(np.clip(self.vy + rng.normal(0.0, 0.15 * self.speed), -limit, limit))
        self.cx += self.vx
        self.cy += self.vy
        lo_x, hi_x = self.w / 2, cfg.width - self.w / 2
        lo_y, hi_y = self.h / 2, cfg.height - self.h / 2
        if not lo_x <= self.cx <= hi_x:
            self.cx = float(np.clip(self.cx, lo_x, hi_x))
            self.vx = -self.vx
        if not lo_y <= self.cy <= hi_y:
            self.cy = float(np.clip(self.cy, lo_y, hi_y))
            self.vy = -self.vy

    def mask(self, xs, ys):
        return ((xs - self.cx) / (self.w / 2)) ** 2 + ((ys - self.cy) / (self.h / 2)) ** 2 <= 1.0

    def shade(self, xs, ys):
        u = np.clip((xs - self.cx + 32).astype(int), 0, 63)
        v = np.clip((ys - self.cy + 32).astype(int), 0, 63)
        return self.texture[v, u]

    def box(self, cfg):
        x0 = max(0.0, self.cx - self.w / 2)
        y0 = max(0.0, self.cy - self.h / 2)
        x1 = min(float(cfg.width), self.cx + self.w / 2)
        y1 = min(float(cfg.height), self.cy + self.h / 2)
        return tuple(round(v, 2) for v in (x0, y0, x1, y1))


def generate_clip(cfg, index):
    """Clip ``index`` of the dataset described by ``cfg``; depends only on ``(cfg, index)``."""
    rng = np.random.default_rng([cfg.seed, cfg.stream, index])
    h, w = cfg.height, cfg.width
    base = np.array([0.45, 0.5, 0.38]) * rng.uniform(0.9, 1.1, size=3)
    background = base + 0.06 * _smooth_noise(rng, h, w, 12) + 0.02 * _smooth_noise(rng, h, w, 40, 3)
    cols = _occluder_mask(rng, cfg)
    bark = np.array([0.58, 0.52, 0.42]) + 0.05 * _smooth_noise(rng, h, w, 8)
    bark += 0.04 * np.sin(np.arange(w) * 1.7)[None, :, None]
    occluded = np.broadcast_to(cols[None, :], (h, w))
    lo, hi = cfg.objects
    movers = [_Mover(rng, cfg) for _ in range(int(rng.integers(lo, hi + 1)))]
    dark = (1.0 - cfg.camouflage) * base
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    light = 1.0
    frames = np.empty((cfg.frames_per_clip, h, w, 3), dtype=np.uint8)
    annotations = []
    for f in range(cfg.frames_per_clip):
        if f:
            for m in movers:
                m.step(rng, cfg)
            light = float(np.clip(light + rng.normal(0.0, cfg.lighting_jitter), 0.6, 1.4)) if cfg.lighting_jitter else 1.0
        img = background.copy()
        masks = [m.mask(xs, ys) for m in movers]
        for m, mk in zip(movers, masks):
            img[mk] = dark * m.tone + 0.05 * m.shade(xs[mk], ys[mk])[:, None]
        img[occluded] = bark[occluded]
        img = img * light
        if cfg.noise:
            img = img + rng.normal(0.0, cfg.noise, size=img.shape)
        frames[f] = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        boxes = []
        for m, mk in zip(movers, masks):
            area = int(mk.sum())
            vis = float((mk & ~occluded).sum()) / area if area else 0.0
            boxes.append(Box(*m.box(cfg), class_id=0, visibility=round(vis, 4)))
        annotations.append(boxes)
    return VideoClip(f"{cfg.id_prefix}{index:04d}", frames, annotations)


def generate_synthetic(cfg):
    return [generate_clip(cfg, i) for i in range(cfg.num_clips)]
