"""Results files and plain-text / CSV report tables."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .boxes import Detection


class ResultsFormatError(ValueError):
    pass


def format_results(dets):
    lines = []
    for d in dets:
        if any(ch.isspace() for ch in d.clip_id) or not d.clip_id:
            raise ValueError(f"clip id {d.clip_id!r} cannot be written to a results file")
        x0, y0, x1, y1 = (float(v) for v in d.box)
        lines.append(f"{d.clip_id} {int(d.frame)} {x0!r} {y0!r} {x1!r} {y1!r} {int(d.class_id)} {float(d.score)!r}")
    return "".join(line + "\n" for line in lines)


def write_results(path, dets):
    """One detection per line: ``clip_id frame x_min y_min x_max y_max class_id score``."""
    Path(path).write_text(format_results(dets), encoding="utf-8")


def parse_results(text, source="<results>"):
    dets = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        f = line.split()
        if len(f) != 8:
            raise ResultsFormatError(f"{source}:{lineno}: expected 8 fields, got {len(f)}")
        try:
            dets.append(Detection(f[0], int(f[1]), tuple(float(v) for v in f[2:6]), int(f[6]), float(f[7])))
        except ValueError as exc:
            raise ResultsFormatError(f"{source}:{lineno}: {exc}") from exc
    return dets


def read_results(path):
    return parse_results(Path(path).read_text(encoding="utf-8"), str(path))


def _cell(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def text_table(header, rows):
    """Left-aligned plain-text table with columns padded to their widest cell."""
    cells = [[str(h) for h in header]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def csv_table(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None or (isinstance(v, float) and math.isnan(v)) else v for v in row])
    return buf.getvalue()
