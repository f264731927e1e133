"""Line-delimited JSON annotation records and their labeling rules.

One record per line::

    {"image": "train/000001.png", "width": 128, "height": 128,
     "line1": [[x, y], [x, y]], "line2": [[x, y], [x, y]], "vp": [x, y]}

``vp`` is optional and re-derivable from the two lines. Coordinates are
written with 17 significant digits so a save/load round trip is exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .geometry import (GeometryError, LineSegment, Point2, make_point, make_segment,
                       segment_intersection)

MIN_LENGTH_FRACTION = 0.05


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    image_path: str
    image_size: tuple
    line1: tuple
    line2: tuple
    vp: Optional[tuple] = None


def _num(v) -> str:
    return format(float(v), ".17g")


def _pt(p) -> str:
    return f"[{_num(p[0])}, {_num(p[1])}]"


def format_record(r: AnnotationRecord) -> str:
    fields = [f'"image": {json.dumps(r.image_path)}',
              f'"width": {int(r.image_size[0])}', f'"height": {int(r.image_size[1])}',
              f'"line1": [{_pt(r.line1[0])}, {_pt(r.line1[1])}]',
              f'"line2": [{_pt(r.line2[0])}, {_pt(r.line2[1])}]']
    if r.vp is not None:
        fields.append(f'"vp": {_pt(r.vp)}')
    return "{" + ", ".join(fields) + "}"


def save_annotations(records, path):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(format_record(r) + "\n")


def _point(v, field, lineno):
    try:
        if len(v) != 2:
            raise ValueError
        return (float(v[0]), float(v[1]))
    except (TypeError, ValueError):
        raise AnnotationError(f"line {lineno}: field {field!r}: expected [x, y], got {v!r}") from None


def _segment(v, field, lineno):
    if not isinstance(v, list) or len(v) != 2:
        raise AnnotationError(f"line {lineno}: field {field!r}: expected two endpoints")
    return (_point(v[0], field, lineno), _point(v[1], field, lineno))


def parse_record(text: str, lineno: int) -> AnnotationRecord:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise AnnotationError(f"line {lineno}: malformed JSON ({e.msg})") from None
    if not isinstance(obj, dict):
        raise AnnotationError(f"line {lineno}: expected an object")
    for key in ("image", "width", "height", "line1", "line2"):
        if key not in obj:
            raise AnnotationError(f"line {lineno}: field {key!r} missing")
    unknown = set(obj) - {"image", "width", "height", "line1", "line2", "vp"}
    if unknown:
        raise AnnotationError(f"line {lineno}: field {sorted(unknown)[0]!r} not recognised")
    if not isinstance(obj["image"], str):
        raise AnnotationError(f"line {lineno}: field 'image': expected a string")
    size = []
    for key in ("width", "height"):
        v = obj[key]
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise AnnotationError(f"line {lineno}: field {key!r}: expected a positive integer")
        size.append(v)
    vp = obj.get("vp")
    return AnnotationRecord(obj["image"], tuple(size), _segment(obj["line1"], "line1", lineno),
                            _segment(obj["line2"], "line2", lineno),
                            None if vp is None else _point(vp, "vp", lineno))


def load_annotations(path) -> list:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(line, lineno))
            except AnnotationError as e:
                raise AnnotationError(f"{path}: {e}") from None
    return records


def derive_vp(record: AnnotationRecord) -> Point2:
    """Intersection of the two labeled lines' extensions."""
    return segment_intersection(record.line1, record.line2)


def validate(record: AnnotationRecord) -> list:
    """Labeling-rule violations as strings; an empty list means valid."""
    problems = []
    w, h = record.image_size
    for name, seg in (("line1", record.line1), ("line2", record.line2)):
        for p in seg:
            if not (0 <= p[0] <= w and 0 <= p[1] <= h):
                problems.append(f"{name} endpoint {tuple(p)} outside image")
        if math.hypot(seg[1][0] - seg[0][0], seg[1][1] - seg[0][1]) < MIN_LENGTH_FRACTION * math.hypot(w, h):
            problems.append(f"{name} shorter than {MIN_LENGTH_FRACTION:.0%} of the image diagonal")
    try:
        vp = derive_vp(record)
    except GeometryError:
        problems.append("no finite intersection")
        return problems
    if not (0 < vp.x < w and 0 < vp.y < h):
        problems.append(f"vp outside image at ({vp.x:.3f}, {vp.y:.3f})")
    return problems


def record_from_scene(scene, image_path) -> AnnotationRecord:
    l1, l2 = scene.main_lines
    return AnnotationRecord(image_path, tuple(scene.image_size),
                            (tuple(l1.a), tuple(l1.b)), (tuple(l2.a), tuple(l2.b)),
                            tuple(scene.vp))


def scene_from_record(record: AnnotationRecord, root) -> "AnnotatedScene":
    from .synthgen import AnnotatedScene, load_png
    img = load_png(Path(root) / record.image_path)
    if (img.shape[1], img.shape[0]) != tuple(record.image_size):
        raise AnnotationError(f"{record.image_path}: image is {img.shape[1]}x{img.shape[0]}, "
                              f"record says {record.image_size[0]}x{record.image_size[1]}")
    lines = tuple(make_segment(*seg) for seg in (record.line1, record.line2))
    vp = make_point(*record.vp) if record.vp is not None else derive_vp(record)
    return AnnotatedScene(img, lines, vp, [], Path(record.image_path).stem)


def load_split(root, split) -> list:
    root = Path(root)
    return [scene_from_record(r, root) for r in load_annotations(root / f"{split}.jsonl")]
