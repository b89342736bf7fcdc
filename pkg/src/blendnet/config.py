"""Experiment configuration: every knob of a run in one flat, INI-serialisable record."""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace

from .blend import BlendConfig, BlendOrder, EmbeddingStrategy, InsertionPoint
from .detector.model import DetectorConfig
from .detector.inference import InferenceConfig
from .video.augment import AugmentConfig
from .video.synthetic import SynthConfig


class ConfigError(ValueError):
    pass


def _f(section, default, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass(frozen=True)
class RunConfig:
    # [run]
    seed: int = _f("run", 0)
    epochs: int = _f("run", 14)
    snippets_per_step: int = _f("run", 1)
    train_stride: int = _f("run", 1)
    val_clips: int = _f("run", 0)  # 0 validates on the whole test split
    momentum: float = _f("run", 0.9)
    weight_decay: float = _f("run", 0.0001)
    grad_clip: float = _f("run", 2.0)  # global gradient norm cap; 0 disables
    warm_start: str = _f("run", "")
    # [data]
    train_dir: str = _f("data", "data/train")
    test_dir: str = _f("data", "data/test")
    target_short: int = _f("data", 128)
    # [synth]
    num_train: int = _f("synth", 40)
    num_test: int = _f("synth", 10)
    frames_per_clip: int = _f("synth", 40)
    width: int = _f("synth", 128)
    height: int = _f("synth", 128)
    objects: tuple = _f("synth", (1, 3))
    object_size: tuple = _f("synth", (18.0, 40.0))
    speed: tuple = _f("synth", (2.5, 4.0))
    occluder_density: float = _f("synth", 0.35)
    occluder_width: tuple = _f("synth", (12, 30))
    lighting_jitter: float = _f("synth", 0.04)
    camouflage: float = _f("synth", 0.35)
    noise: float = _f("synth", 0.01)
    # [blend]
    T_train: int = _f("blend", 5)
    T_test: int = _f("blend", 9)
    insertion_point: str = _f("blend", InsertionPoint.AFTER_ADD.value)
    embedding_strategy: str = _f("blend", EmbeddingStrategy.MAIN_AND_REFS.value)
    reduction_ratio: int = _f("blend", 4)
    order: str = _f("blend", BlendOrder.TCM_THEN_SCM.value)
    # [detector]
    backbone_channels: tuple = _f("detector", (16, 32, 64, 128, 128))
    head_width: int = _f("detector", 64)
    head_convs: int = _f("detector", 4)
    num_classes: int = _f("detector", 1)
    prior: float = _f("detector", 0.01)
    anchor_base_sizes: tuple = _f("detector", ())  # empty: 32..512 scaled to the input
    fg_iou: float = _f("detector", 0.5)
    bg_iou: float = _f("detector", 0.4)
    focal_alpha: float = _f("detector", 0.25)
    focal_gamma: float = _f("detector", 2.0)
    smooth_l1_beta: float = _f("detector", 1.0 / 9)
    # [schedule]
    warmup_iters: int = _f("schedule", 500)
    lr_start: float = _f("schedule", 0.002)
    lr_peak: float = _f("schedule", 0.01)
    decay_epochs: tuple = _f("schedule", (6, 11))
    decay_factor: float = _f("schedule", 0.1)
    # [augment]
    brightness: tuple = _f("augment", (0.7, 1.3))
    flip_prob: float = _f("augment", 0.5)
    max_crop: float = _f("augment", 0.1)
    # [eval]
    score_floor: float = _f("eval", 0.05)
    pre_nms_top_k: int = _f("eval", 1000)
    nms_iou: float = _f("eval", 0.5)
    max_detections: int = _f("eval", 100)
    iou_thresh: float = _f("eval", 0.5)
    test_stride: int = _f("eval", 1)

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(f.default, tuple):
                object.__setattr__(self, f.name, tuple(value))
        for name in ("insertion_point", "embedding_strategy", "order"):
            enum = {"insertion_point": InsertionPoint, "embedding_strategy": EmbeddingStrategy,
                    "order": BlendOrder}[name]
            try:
                object.__setattr__(self, name, enum(getattr(self, name)).value)
            except ValueError as exc:
                valid = ", ".join(e.value for e in enum)
                raise ConfigError(f"{name} must be one of {valid}; got {getattr(self, name)!r}") from exc
        for name in ("T_train", "T_test"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                raise ConfigError(f"{name} must be odd and >= 1, got {v}")
        if self.epochs < 1 or self.snippets_per_step < 1 or self.warmup_iters < 0:
            raise ConfigError("epochs and snippets_per_step must be >= 1, warmup_iters >= 0")
        if self.target_short < 64:
            raise ConfigError("target_short must be at least 64")

    # ------------------------------------------------------------ views

    def blend_config(self, T=None):
        return BlendConfig(T=T or self.T_train, insertion_point=self.insertion_point,
                           embedding_strategy=self.embedding_strategy, reduction_ratio=self.reduction_ratio,
                           order=self.order)

    def detector_config(self):
        return DetectorConfig(backbone_channels=self.backbone_channels, width=self.head_width,
                              num_classes=self.num_classes, head_convs=self.head_convs, prior=self.prior,
                              anchor_base_sizes=self.anchor_base_sizes or None, fg_iou=self.fg_iou,
                              bg_iou=self.bg_iou, focal_alpha=self.focal_alpha, focal_gamma=self.focal_gamma,
                              smooth_l1_beta=self.smooth_l1_beta)

    def synth_config(self, split):
        count = {"train": self.num_train, "test": self.num_test}[split]
        return SynthConfig(num_clips=count, frames_per_clip=self.frames_per_clip, width=self.width,
                           height=self.height, objects=self.objects, object_size=self.object_size,
                           speed=self.speed, occluder_density=self.occluder_density,
                           occluder_width=self.occluder_width, lighting_jitter=self.lighting_jitter,
                           camouflage=self.camouflage, noise=self.noise, seed=self.seed,
                           stream=0 if split == "train" else 1, id_prefix=f"{split}")

    def augment_config(self):
        return AugmentConfig(brightness=self.brightness, flip_prob=self.flip_prob, max_crop=self.max_crop)

    def inference_config(self):
        return InferenceConfig(score_floor=self.score_floor, pre_nms_top_k=self.pre_nms_top_k,
                               nms_iou=self.nms_iou, max_detections=self.max_detections)

    def with_(self, **changes):
        return replace(self, **changes)

    # ------------------------------------------------------------ serialisation

    def to_ini(self):
        sections = {}
        for f in fields(self):
            sections.setdefault(f.metadata["section"], []).append(f"{f.name} = {_encode(getattr(self, f.name))}")
        return "\n".join(f"[{name}]\n" + "\n".join(lines) + "\n" for name, lines in sections.items())

    def digest(self):
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()

    @classmethod
    def from_ini(cls, text, source="<config>"):
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        known = {f.name: f for f in fields(cls)}
        values = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                f = known.get(key)
                if f is None:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
                if f.metadata["section"] != section:
                    raise ConfigError(f"{source}: key {key!r} belongs in [{f.metadata['section']}], not [{section}]")
                values[key] = _decode(raw, f.default, f"{source}: {key}")
        return cls(**values)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_ini(fh.read(), str(path))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_ini())


def _encode(v):
    if isinstance(v, tuple):
        return ", ".join(_encode(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _decode(raw, default, where):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            kind = type(default[0]) if default else float
            return tuple(kind(x.strip()) for x in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc
