"""Clips, snippet sampling, augmentation, letterboxing and the synthetic generator."""
from .annotations import AnnotationError, load_annotations, load_clip, load_dataset, save_annotations, save_clip
from .augment import AugmentConfig, AugmentParams, Letterbox, augment, resize_letterbox
from .clip import Box, SnippetBatch, VideoClip, sample_snippet, snippet_indices
from .synthetic import SynthConfig, generate_clip, generate_synthetic

__all__ = [
    "AnnotationError", "AugmentConfig", "AugmentParams", "Box", "Letterbox", "SnippetBatch", "SynthConfig",
    "VideoClip", "augment", "generate_clip", "generate_synthetic", "load_annotations", "load_clip",
    "load_dataset", "resize_letterbox", "sample_snippet", "save_annotations", "save_clip", "snippet_indices",
]
