"""Feature-pyramid detector: anchors, targets, losses, model and inference."""
from .anchors import LEVELS, AnchorSet, AnchorSpec, generate_anchors, level_sizes
from .losses import box_loss, focal_loss
from .model import Detector, DetectorConfig, MissingRecordError, PyramidFeatures, len_support
from .targets import BACKGROUND, IGNORE, DetectionTargets, assign_targets, decode_boxes, encode

__all__ = [
    "AnchorSet", "AnchorSpec", "BACKGROUND", "Detector", "DetectorConfig", "DetectionTargets", "IGNORE", "LEVELS", "MissingRecordError",
    "PyramidFeatures", "assign_targets", "box_loss", "decode_boxes", "encode", "focal_loss", "generate_anchors",
    "len_support", "level_sizes",
]
