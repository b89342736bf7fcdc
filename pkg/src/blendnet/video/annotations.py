"""Annotation text files and on-disk clip storage.

One annotation file per clip::

    #blendnet-ann v1 <clip_id> <W> <H> <num_frames>
    frame_idx x_min y_min x_max y_max class_id visibility

Pixel coordinates carry two decimals and visibility four (-1 when unknown).
Frames sit beside the file as lossless ``frame_%06d.png`` images.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .clip import Box, VideoClip

HEADER = "#blendnet-ann"
VERSION = "v1"
ANNOTATION_FILE = "annotations.txt"
FRAME_PATTERN = "frame_{:06d}.png"


class AnnotationError(ValueError):
    pass


@dataclass
class ClipAnnotations:
    clip_id: str
    width: int | None
    height: int | None
    frames: list  # per frame list of Box


def format_annotations(clip_id, width, height, frames):
    lines = [f"{HEADER} {VERSION} {clip_id} {width} {height} {len(frames)}"]
    for i, boxes in enumerate(frames):
        for b in boxes:
            lines.append(f"{i} {b.x0:.2f} {b.y0:.2f} {b.x1:.2f} {b.y1:.2f} {int(b.class_id)} {b.visibility:.4f}")
    return "\n".join(lines) + "\n"


def save_annotations(clip, path):
    Path(path).write_text(format_annotations(clip.id, clip.width, clip.height, clip.annotations), encoding="utf-8")


def parse_annotations(text, source="<annotations>", num_frames=None, clip_id=None):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    width = height = None
    start = 0
    if lines and lines[0].startswith(HEADER):
        parts = lines[0].split()
        if len(parts) != 6 or parts[1] != VERSION:
            raise AnnotationError(f"{source}:1: malformed header {lines[0]!r}")
        try:
            clip_id, width, height, declared = parts[2], int(parts[3]), int(parts[4]), int(parts[5])
        except ValueError as exc:
            raise AnnotationError(f"{source}:1: malformed header {lines[0]!r}") from exc
        num_frames = declared if num_frames is None else num_frames
        start = 1
    rows = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 7:
            raise AnnotationError(f"{source}:{lineno}: expected 7 fields, got {len(fields)}")
        try:
            frame = int(fields[0])
            coords = [float(v) for v in fields[1:5]]
            cls = int(fields[5])
            vis = float(fields[6])
        except ValueError as exc:
            raise AnnotationError(f"{source}:{lineno}: {exc}") from exc
        if frame < 0 or (num_frames is not None and frame >= num_frames):
            raise AnnotationError(f"{source}:{lineno}: frame index {frame} out of range")
        if not all(np.isfinite(coords)) or coords[0] >= coords[2] or coords[1] >= coords[3]:
            raise AnnotationError(f"{source}:{lineno}: degenerate box {coords}")
        if not (vis == -1.0 or 0.0 <= vis <= 1.0):
            raise AnnotationError(f"{source}:{lineno}: visibility {vis} outside [0, 1]")
        if width is not None:
            clamped = [min(max(coords[0], 0.0), width), min(max(coords[1], 0.0), height),
                       min(max(coords[2], 0.0), width), min(max(coords[3], 0.0), height)]
            if clamped != coords:
                warnings.warn(f"{source}:{lineno}: box {coords} clamped to the {width}x{height} frame")
                if clamped[0] >= clamped[2] or clamped[1] >= clamped[3]:
                    raise AnnotationError(f"{source}:{lineno}: box lies outside the frame")
                coords = clamped
        rows.append((frame, Box(*coords, class_id=cls, visibility=vis)))
    if num_frames is None:
        num_frames = max((r[0] for r in rows), default=-1) + 1
    frames = [[] for _ in range(num_frames)]
    for frame, box in rows:
        frames[frame].append(box)
    return ClipAnnotations(clip_id, width, height, frames)


def load_annotations(path, num_frames=None):
    """Parse an annotation file; an empty file yields no boxes."""
    path = Path(path)
    return parse_annotations(path.read_text(encoding="utf-8"), str(path), num_frames,
                             clip_id=path.parent.name)


def save_clip(clip, directory):
    """Write ``directory/frame_%06d.png`` plus the annotation file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        if not cv2.imwrite(str(directory / FRAME_PATTERN.format(i)), cv2.cvtColor(frame, cv2.COLOR_RGB2BGR)):
            raise OSError(f"could not write frame {i} of {clip.id}")
    save_annotations(clip, directory / ANNOTATION_FILE)


def load_clip(directory):
    directory = Path(directory)
    names = sorted(p.name for p in directory.glob("frame_*.png"))
    frames = []
    for i, name in enumerate(names):
        if name != FRAME_PATTERN.format(i):
            raise AnnotationError(f"{directory}: frame files are not numbered consecutively at {name}")
        img = cv2.imread(str(directory / name), cv2.IMREAD_COLOR)
        if img is None:
            raise OSError(f"could not read {directory / name}")
        frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
    ann = load_annotations(directory / ANNOTATION_FILE, num_frames=len(frames))
    if frames and ann.width is not None and (ann.width, ann.height) != (frames[0].shape[1], frames[0].shape[0]):
        raise AnnotationError(f"{directory}: header size {ann.width}x{ann.height} does not match frames")
    return VideoClip(ann.clip_id or directory.name, np.stack(frames) if frames else np.zeros((0, 1, 1, 3), np.uint8),
                     ann.frames)


def load_dataset(directory):
    """All clips below ``directory`` (one sub-directory per clip), sorted by name."""
    directory = Path(directory)
    subdirs = sorted(p for p in directory.iterdir() if p.is_dir() and (p / ANNOTATION_FILE).exists())
    return [load_clip(p) for p in subdirs]


def dataset_files(directory):
    """Relative paths of every file in a dataset directory, sorted."""
    directory = Path(directory)
    out = []
    for root, _, files in os.walk(directory):
        for f in files:
            out.append(str((Path(root) / f).relative_to(directory)))
    return sorted(out)
