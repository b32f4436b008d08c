"""Text formats shared by the referee, the client SDK and the CLI.

Detection rows are whitespace separated::

    image_id class_id confidence xmin ymin xmax ymax

Track-1 log rows are comma separated::

    image_id,predicted_class,latency_ms,correct
"""

from __future__ import annotations

import json
from typing import Iterable, Mapping

from .errors import InvalidInput, ParseError
from .scoring import BoundingBox, Detection, Track1Record

_FIELDS = ("image_id", "class_id", "confidence", "xmin", "ymin", "xmax", "ymax")
_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}


def _detection(values, lineno: int, source: str | None, known_images, num_classes) -> Detection:
    try:
        image_id = str(values[0])
        det = Detection(image_id, int(values[1]), float(values[2]),
                        BoundingBox(*(float(v) for v in values[3:7])))
    except (ValueError, TypeError, InvalidInput) as exc:
        raise ParseError(f"bad detection {list(values)!r}: {exc}", lineno, source) from exc
    if known_images is not None and image_id not in known_images:
        raise ParseError(f"unknown image_id {image_id!r}", lineno, source)
    if num_classes is not None and not 1 <= det.class_id <= num_classes:
        raise ParseError(f"class_id {det.class_id} outside 1..{num_classes}", lineno, source)
    return det


def parse_detections(payload: str | bytes, known_images: Mapping | set | None = None,
                     num_classes: int | None = None, source: str | None = None) -> list[Detection]:
    """Parse a detection payload, all or nothing.

    Accepts newline-delimited rows or a JSON array of objects (or 7-element
    arrays). The first bad row raises :class:`ParseError`.
    """
    if isinstance(payload, bytes):
        try:
            payload = payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"payload is not UTF-8: {exc}", None, source) from exc
    text = payload.lstrip()
    if text.startswith("["):
        try:
            rows = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, source) from exc
        out = []
        for n, row in enumerate(rows, 1):
            if isinstance(row, Mapping):
                missing = [k for k in _FIELDS if k not in row]
                if missing:
                    raise ParseError(f"record {n} missing {missing}", n, source)
                row = [row[k] for k in _FIELDS]
            if not isinstance(row, (list, tuple)) or len(row) != 7:
                raise ParseError(f"record {n} must have 7 fields", n, source)
            out.append(_detection(row, n, source, known_images, num_classes))
        return out

    out = []
    for lineno, raw in enumerate(payload.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ParseError(f"expected 7 fields, got {len(parts)}", lineno, source)
        out.append(_detection(parts, lineno, source, known_images, num_classes))
    return out


def format_detections(dets: Iterable[Detection]) -> str:
    return "".join(
        f"{d.image_id} {d.class_id} {d.confidence!r} {d.box.xmin!r} {d.box.ymin!r} "
        f"{d.box.xmax!r} {d.box.ymax!r}\n" for d in dets)


def detections_to_json(dets: Iterable[Detection]) -> str:
    return json.dumps([{"image_id": d.image_id, "class_id": d.class_id,
                        "confidence": d.confidence, "xmin": d.box.xmin, "ymin": d.box.ymin,
                        "xmax": d.box.xmax, "ymax": d.box.ymax} for d in dets])


def _flag(value: str, lineno: int, source: str | None) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ParseError(f"bad boolean {value!r}", lineno, source)


def parse_track1_log(text: str, source: str | None = None) -> list[Track1Record]:
    records = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if parts[0] == "image_id":
            continue
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields, got {len(parts)}", lineno, source)
        try:
            rec = Track1Record(parts[0], int(parts[1]), float(parts[2]), _flag(parts[3], lineno, source))
        except (ValueError, InvalidInput) as exc:
            raise ParseError(str(exc), lineno, source) from exc
        records.append(rec)
    return records


def format_track1_log(records: Iterable[Track1Record]) -> str:
    lines = ["image_id,predicted_class,latency_ms,correct"]
    lines += [f"{r.image_id},{r.predicted_class},{r.latency_ms!r},{int(r.correct)}" for r in records]
    return "\n".join(lines) + "\n"
