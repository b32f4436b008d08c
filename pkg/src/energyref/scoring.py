"""Competition metrics: IoU matching, AP/mAP, the energy score and Track-1 metrics.

Everything here is a pure function of immutable inputs. The inner loops
(IoU, greedy matching, AP accumulation) live in :mod:`energyref.kernels`.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import InvalidInput, ParseError

DEFAULT_IOU_THRESHOLD = 0.5
DEFAULT_BUDGET_MS = 30.0
DEFAULT_BIN_WIDTH = 0.05


@dataclass(frozen=True, slots=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, origin at the top-left corner."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        coords = tuple(float(c) for c in (self.xmin, self.ymin, self.xmax, self.ymax))
        for name, value in zip(("xmin", "ymin", "xmax", "ymax"), coords):
            object.__setattr__(self, name, value)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidInput(f"non-finite box coordinate in {coords}")
        if min(coords) < 0:
            raise InvalidInput(f"negative box coordinate in {coords}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise InvalidInput(f"degenerate box {coords}: needs xmin < xmax and ymin < ymax")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)


@dataclass(frozen=True, slots=True)
class Detection:
    image_id: str
    class_id: int
    confidence: float
    box: BoundingBox

    def __post_init__(self) -> None:
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "class_id", int(self.class_id))
        if not (0.0 <= self.confidence <= 1.0):
            raise InvalidInput(f"confidence {self.confidence!r} outside [0, 1]")
        if self.class_id < 1:
            raise InvalidInput(f"class_id {self.class_id} must be >= 1")


@dataclass(frozen=True, slots=True)
class GroundTruthObject:
    image_id: str
    class_id: int
    box: BoundingBox


class MatchResult(NamedTuple):
    flags: list[tuple[float, bool]]
    unmatched_gt: int


@dataclass(frozen=True)
class ScoreReport:
    map_value: float
    energy_wh: float
    score: float
    images_processed: int
    images_total: int
    label: str = ""
    window_start_s: float = 0.0
    window_end_s: float = 0.0

    def dumps(self) -> str:
        """Render as ``key=value`` lines; floats use ``repr`` so they round-trip exactly."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name}={value!r}" if isinstance(value, float) else f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, source: str | None = None) -> "ScoreReport":
        types = {f.name: f.type for f in fields(cls)}
        values: dict[str, object] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in types:
                raise ParseError(f"unexpected report line {raw!r}", lineno, source)
            kind = types[key]
            try:
                if kind == "float":
                    values[key] = float(value)
                elif kind == "int":
                    values[key] = int(value)
                else:
                    values[key] = value.strip()
            except ValueError as exc:
                raise ParseError(f"bad value for {key}: {value!r}", lineno, source) from exc
        missing = {"map_value", "energy_wh", "score"} - values.keys()
        if missing:
            raise ParseError(f"report missing keys {sorted(missing)}", None, source)
        values.setdefault("images_processed", 0)
        values.setdefault("images_total", 0)
        return cls(**values)  # type: ignore[arg-type]


@dataclass(frozen=True, slots=True)
class Track1Record:
    image_id: str
    predicted_class: int
    latency_ms: float
    correct: bool

    def __post_init__(self) -> None:
        if not math.isfinite(self.latency_ms) or self.latency_ms < 0:
            raise InvalidInput(f"latency_ms {self.latency_ms!r} must be finite and >= 0")


@dataclass(frozen=True, slots=True)
class Track1Report:
    mean_latency_ms: float
    test_metric: float
    accuracy_on_classified: float
    accuracy_per_time: float
    num_classified: int
    num_total: int


@dataclass(frozen=True, slots=True)
class ScoreStatistics:
    mean: float
    median: float
    mode: float
    stddev: float
    count: int = field(default=0)


def _box(b) -> BoundingBox:
    return b if isinstance(b, BoundingBox) else BoundingBox(*b)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when they are disjoint."""
    a, b = _box(a), _box(b)
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _rank(items: Sequence, key=lambda d: d.confidence) -> list:
    # stable sort keeps submission order among equal confidences
    return sorted(items, key=lambda d: -key(d))


def _boxes(objs) -> np.ndarray:
    if not objs:
        return np.empty((0, 4), dtype=np.float64)
    return np.array([o.box.as_tuple() for o in objs], dtype=np.float64)


def _match_ranked(ranked: Sequence[Detection], gts: Sequence[GroundTruthObject],
                  iou_threshold: float, image_index: Mapping[str, int] | None = None) -> np.ndarray:
    if image_index is None:
        image_index = {}
        for o in list(gts) + list(ranked):
            image_index.setdefault(o.image_id, len(image_index))
    det_img = np.array([image_index.get(d.image_id, -1) for d in ranked], dtype=np.int64)
    gt_img = np.array([image_index[g.image_id] for g in gts], dtype=np.int64)
    return kernels.greedy_match(_boxes(ranked), det_img, _boxes(gts), gt_img, iou_threshold)


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruthObject],
                     iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MatchResult:
    """Greedily match one class's detections against its ground truth.

    Detections are visited by descending confidence (submission order breaks
    ties). Each takes the highest-IoU unmatched ground truth in the same image
    if that IoU is at least ``iou_threshold``; otherwise it is a false positive.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise InvalidInput(f"iou_threshold {iou_threshold!r} outside (0, 1]")
    classes = {d.class_id for d in dets} | {g.class_id for g in gts}
    if len(classes) > 1:
        raise InvalidInput(f"match_detections needs a single class, got {sorted(classes)}")
    ranked = _rank(dets)
    tp = _match_ranked(ranked, gts, iou_threshold)
    flags = [(d.confidence, bool(t)) for d, t in zip(ranked, tp)]
    return MatchResult(flags, len(gts) - int(tp.sum()))


def average_precision(flags: Iterable[tuple[float, bool]], num_gt: int) -> float | None:
    """All-point (area under the interpolated PR curve) average precision.

    Returns ``None`` when there is neither ground truth nor any detection,
    meaning the class should be left out of a mean.
    """
    if num_gt < 0:
        raise InvalidInput(f"num_gt {num_gt} must be >= 0")
    ranked = _rank(list(flags), key=lambda f: f[0])
    if num_gt == 0:
        return 0.0 if ranked else None
    tp = np.fromiter((bool(f[1]) for f in ranked), dtype=np.bool_, count=len(ranked))
    if int(tp.sum()) > num_gt:
        raise InvalidInput(f"{int(tp.sum())} true positives exceed num_gt {num_gt}")
    return kernels.average_precision(tp, num_gt)


def _label_set(label_space) -> set[int]:
    if isinstance(label_space, int):
        return set(range(1, label_space + 1))
    return set(label_space)


def per_class_average_precision(all_dets: Iterable[Detection], gt: Iterable[GroundTruthObject],
                                label_space, iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                                image_ids: Iterable[str] | None = None) -> dict[int, float]:
    """AP for every class that has at least one ground-truth instance."""
    labels = _label_set(label_space)
    gt = list(gt)
    if not gt:
        raise InvalidInput("ground truth is empty; mAP is undefined")
    known_images = set(image_ids) if image_ids is not None else None

    gt_by_class: dict[int, list[GroundTruthObject]] = defaultdict(list)
    for g in gt:
        if g.class_id not in labels:
            raise InvalidInput(f"ground truth class {g.class_id} outside the label space")
        gt_by_class[g.class_id].append(g)
    dets_by_class: dict[int, list[Detection]] = defaultdict(list)
    for d in all_dets:
        if d.class_id not in labels:
            raise InvalidInput(f"detection class {d.class_id} outside the label space")
        if known_images is not None and d.image_id not in known_images:
            raise InvalidInput(f"detection references unknown image {d.image_id!r}")
        dets_by_class[d.class_id].append(d)

    image_index: dict[str, int] = {}
    for g in gt:
        image_index.setdefault(g.image_id, len(image_index))

    result = {}
    for cls in sorted(gt_by_class):
        gts = gt_by_class[cls]
        ranked = _rank(dets_by_class.get(cls, []))
        tp = _match_ranked(ranked, gts, iou_threshold, image_index)
        result[cls] = kernels.average_precision(tp, len(gts))
    return result


def mean_average_precision(all_dets: Iterable[Detection], gt: Iterable[GroundTruthObject],
                           label_space, iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                           image_ids: Iterable[str] | None = None) -> float:
    """Unweighted mean of per-class AP over classes present in the ground truth.

    Images that were never answered only add unmatched ground truth, so a
    partial run is penalised through recall.
    """
    aps = per_class_average_precision(all_dets, gt, label_space, iou_threshold, image_ids)
    return math.fsum(aps.values()) / len(aps)


def final_score(map_value: float, energy_wh: float) -> float:
    if not (0.0 <= map_value <= 1.0):
        raise InvalidInput(f"mAP {map_value!r} outside [0, 1]")
    if not energy_wh > 0:
        raise InvalidInput(f"energy {energy_wh!r} Wh must be positive (meter failure?)")
    return map_value / energy_wh


def build_score_report(map_value: float, energy_wh: float, images_processed: int,
                       images_total: int, label: str = "", window_start_s: float = 0.0,
                       window_end_s: float = 0.0) -> ScoreReport:
    # nothing can be measured over an empty window, so it scores 0 rather than infinity
    if energy_wh <= 0 and (map_value == 0 or window_end_s <= window_start_s):
        score = 0.0
    else:
        score = final_score(map_value, energy_wh)
    if images_processed > images_total:
        raise InvalidInput(f"images_processed {images_processed} > images_total {images_total}")
    return ScoreReport(map_value, energy_wh, score, images_processed, images_total,
                       label, window_start_s, window_end_s)


def track1_metrics(records: Sequence[Track1Record], per_image_budget_ms: float = DEFAULT_BUDGET_MS,
                   num_total: int | None = None) -> Track1Report:
    """Wall-time metrics for a classification run processed in ``records`` order.

    The run gets ``num_total * per_image_budget_ms`` of wall time. An image
    counts as classified when its cumulative completion time fits inside
    that budget.
    """
    if not per_image_budget_ms > 0:
        raise InvalidInput(f"per_image_budget_ms {per_image_budget_ms!r} must be > 0")
    if num_total is None:
        num_total = len(records)
    if num_total < len(records):
        raise InvalidInput(f"{len(records)} records exceed num_total {num_total}")
    if not records:
        return Track1Report(0.0, 0.0, 0.0, 0.0, 0, num_total)

    latency = np.array([r.latency_ms for r in records], dtype=np.float64)
    correct = np.array([r.correct for r in records], dtype=np.bool_)
    budget = num_total * per_image_budget_ms
    classified = np.cumsum(latency) <= budget
    num_classified = int(classified.sum())
    hits = int((classified & correct).sum())
    total_time = float(latency.sum())

    test_metric = hits / num_total
    acc = hits / num_classified if num_classified else 0.0
    return Track1Report(
        mean_latency_ms=float(latency.mean()),
        test_metric=test_metric,
        accuracy_on_classified=acc,
        accuracy_per_time=acc / max(total_time, budget),
        num_classified=num_classified,
        num_total=num_total,
    )


def score_statistics(scores: Sequence[float], bin_width: float = DEFAULT_BIN_WIDTH) -> ScoreStatistics:
    """Mean, median, population stddev and a binned mode of real-valued scores.

    The mode is the centre of the most populated ``[k*w, (k+1)*w)`` bin; ties
    go to the lowest bin.
    """
    if len(scores) == 0:
        raise InvalidInput("score_statistics needs at least one score")
    if not bin_width > 0:
        raise InvalidInput(f"bin_width {bin_width!r} must be > 0")
    arr = np.asarray(scores, dtype=np.float64)
    # small epsilon so values sitting exactly on a bin edge are not pushed down by rounding
    bins = np.floor(arr / bin_width + 1e-9).astype(np.int64)
    uniq, counts = np.unique(bins, return_counts=True)
    mode_bin = uniq[int(np.argmax(counts))]
    return ScoreStatistics(
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        mode=float((mode_bin + 0.5) * bin_width),
        stddev=float(arr.std()),
        count=int(arr.size),
    )
