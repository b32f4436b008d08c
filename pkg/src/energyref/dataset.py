"""Test-set manifests, PNM image I/O, thumbnail near-duplicate detection and fixtures.

A manifest is a JSON document::

    {
      "classes": ["person", "dog", ...],
      "images": [{"image_id": "000000", "path": "images/000000.ppm",
                  "content_type": "image/x-portable-pixmap"}, ...],
      "annotations": [{"image_id": "000000", "class_id": 3,
                       "xmin": 4, "ymin": 2, "xmax": 20, "ymax": 17}, ...]
    }

Annotation entries may also be flat strings ``"image_id class_id xmin ymin xmax ymax"``.
Image paths are relative to the manifest file.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import InvalidInput, ManifestError
from .scoring import BoundingBox, GroundTruthObject

DEFAULT_NUM_CLASSES = 200
THUMBNAIL_SIZE = 30
# 2 grey levels RMS over a 30x30 grayscale thumbnail
DEFAULT_DUP_THRESHOLD = 60.0
LUMA = np.array([0.299, 0.587, 0.114])

PPM_TYPE = "image/x-portable-pixmap"
PGM_TYPE = "image/x-portable-graymap"
_CONTENT_TYPES = {".ppm": PPM_TYPE, ".pgm": PGM_TYPE, ".png": "image/png",
                  ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}


@dataclass(frozen=True, eq=False)
class PixelMatrix:
    """8-bit image as a ``(height, width, channels)`` array."""

    width: int
    height: int
    channels: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise InvalidInput(f"zero-dimension image {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise InvalidInput(f"channels must be 1 or 3, got {self.channels}")
        vals = np.asarray(self.values, dtype=np.uint8)
        if vals.size != self.width * self.height * self.channels:
            raise InvalidInput(
                f"{vals.size} values do not fill {self.width}x{self.height}x{self.channels}")
        object.__setattr__(self, "values", vals.reshape(self.height, self.width, self.channels))

    @classmethod
    def from_array(cls, arr) -> "PixelMatrix":
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or 0 in arr.shape:
            raise InvalidInput(f"cannot build an image from shape {arr.shape}")
        return cls(arr.shape[1], arr.shape[0], arr.shape[2], arr)

    def __eq__(self, other) -> bool:
        return (isinstance(other, PixelMatrix) and self.values.shape == other.values.shape
                and bool(np.array_equal(self.values, other.values)))

    def grayscale(self) -> np.ndarray:
        v = self.values.astype(np.float64)
        return v[:, :, 0] if self.channels == 1 else v @ LUMA


# --- PNM codec -------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def encode_pnm(pm: PixelMatrix) -> bytes:
    magic = b"P6" if pm.channels == 3 else b"P5"
    return b"%s\n%d %d\n255\n" % (magic, pm.width, pm.height) + pm.values.tobytes()


def decode_pnm(data: bytes) -> PixelMatrix:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise InvalidInput("truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens
    if magic not in (b"P5", b"P6") or int(maxval) != 255:
        raise InvalidInput(f"unsupported PNM variant {magic!r} maxval {maxval!r}")
    channels = 3 if magic == b"P6" else 1
    w, h = int(w), int(h)
    body = data[pos + 1 : pos + 1 + w * h * channels]
    if len(body) != w * h * channels:
        raise InvalidInput("truncated PNM pixel data")
    return PixelMatrix(w, h, channels, np.frombuffer(body, dtype=np.uint8))


Decoder = Callable[[bytes], PixelMatrix]
DECODERS: dict[str, Decoder] = {PPM_TYPE: decode_pnm, PGM_TYPE: decode_pnm}


def register_decoder(content_type: str, decoder: Decoder) -> None:
    DECODERS[content_type] = decoder


def decode_image(payload: bytes, content_type: str) -> PixelMatrix:
    try:
        decoder = DECODERS[content_type]
    except KeyError:
        raise InvalidInput(f"no decoder registered for {content_type!r}") from None
    return decoder(payload)


def content_type_for(path: str | Path) -> str:
    return _CONTENT_TYPES.get(Path(path).suffix.lower(), "application/octet-stream")


# --- thumbnails and near-duplicates ----------------------------------------

def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Area-weighted box filter mapping ``n_in`` samples onto ``n_out`` cells."""
    scale = n_in / n_out
    edges = np.arange(n_out + 1) * scale
    lo = edges[:-1, None]
    hi = edges[1:, None]
    j = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, j + 1) - np.maximum(lo, j), 0.0, None)
    return overlap / scale


def thumbnail(pm: PixelMatrix, size: int = THUMBNAIL_SIZE, gray: bool = False) -> np.ndarray:
    """Box-average ``pm`` down (or up) to ``size x size``; returns float64 ``(size, size, c)``."""
    rows = _pool_matrix(pm.height, size)
    cols = _pool_matrix(pm.width, size)
    if gray:
        return (rows @ pm.grayscale() @ cols.T)[:, :, None]
    v = pm.values.astype(np.float64)
    return np.einsum("ih,hwc,jw->ijc", rows, v, cols)


def thumbnail_distance(a: PixelMatrix, b: PixelMatrix) -> float:
    """L2 norm between 30x30 thumbnails; mixed colour/grey pairs compare in luma."""
    gray = a.channels != b.channels
    return float(np.linalg.norm(thumbnail(a, gray=gray) - thumbnail(b, gray=gray)))


def _thumbs(corpus: Sequence[PixelMatrix], idx: Sequence[int], gray: bool) -> np.ndarray:
    if not idx:
        return np.empty((0, 0))
    return np.stack([thumbnail(corpus[i], gray=gray).ravel() for i in idx])


def find_duplicates(corpus: Sequence[PixelMatrix], threshold: float = DEFAULT_DUP_THRESHOLD,
                    reference: Sequence[PixelMatrix] | None = None) -> list[tuple[int, int]]:
    """Pairs of images whose thumbnail distance is at most ``threshold``.

    Without ``reference`` every unordered pair inside ``corpus`` is checked and
    reported once as ``(i, j)`` with ``i < j``. With ``reference`` only
    cross pairs are checked and ``j`` indexes ``reference``.
    """
    if threshold < 0:
        raise InvalidInput(f"threshold {threshold!r} must be >= 0")
    by_channels: dict[int, list[int]] = {}
    for i, pm in enumerate(corpus):
        by_channels.setdefault(pm.channels, []).append(i)
    pairs: set[tuple[int, int]] = set()

    if reference is None:
        groups = sorted(by_channels.items())
        for _, idx in groups:
            for i, j in kernels.pairwise_within(_thumbs(corpus, idx, False), threshold):
                pairs.add((idx[i], idx[j]))
        for gi in range(len(groups)):
            for gj in range(gi + 1, len(groups)):
                ia, ib = groups[gi][1], groups[gj][1]
                hits = kernels.pairwise_cross(_thumbs(corpus, ia, True), _thumbs(corpus, ib, True),
                                              threshold)
                for i, j in hits:
                    pairs.add((min(ia[i], ib[j]), max(ia[i], ib[j])))
        return sorted(pairs)

    ref_by_channels: dict[int, list[int]] = {}
    for j, pm in enumerate(reference):
        ref_by_channels.setdefault(pm.channels, []).append(j)
    for ca, ia in by_channels.items():
        for cb, ib in ref_by_channels.items():
            gray = ca != cb
            hits = kernels.pairwise_cross(_thumbs(corpus, ia, gray), _thumbs(reference, ib, gray),
                                          threshold)
            pairs.update((ia[i], ib[j]) for i, j in hits)
    return sorted(pairs)


# --- manifests --------------------------------------------------------------

@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    path: Path
    content_type: str


@dataclass
class DatasetManifest:
    images: list[ImageEntry]
    classes: list[str]
    ground_truth: list[GroundTruthObject]
    source: Path | None = field(default=None, compare=False)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def image_ids(self) -> list[str]:
        return [e.image_id for e in self.images]

    def ground_truth_by_image(self) -> dict[str, list[GroundTruthObject]]:
        out: dict[str, list[GroundTruthObject]] = {e.image_id: [] for e in self.images}
        for g in self.ground_truth:
            out[g.image_id].append(g)
        return out

    def to_dict(self, base_dir: Path) -> dict:
        return {
            "classes": list(self.classes),
            "images": [{"image_id": e.image_id,
                        "path": Path(os.path.relpath(e.path, base_dir)).as_posix(),
                        "content_type": e.content_type} for e in self.images],
            "annotations": [{"image_id": g.image_id, "class_id": g.class_id,
                             "xmin": g.box.xmin, "ymin": g.box.ymin,
                             "xmax": g.box.xmax, "ymax": g.box.ymax}
                            for g in self.ground_truth],
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(path.resolve().parent), indent=1) + "\n")
        return path


def _annotation(entry, where: str) -> GroundTruthObject:
    try:
        if isinstance(entry, str):
            image_id, cls, *coords = entry.split()
            if len(coords) != 4:
                raise ValueError("expected 'image_id class_id xmin ymin xmax ymax'")
        else:
            image_id, cls = entry["image_id"], entry["class_id"]
            coords = [entry[k] for k in ("xmin", "ymin", "xmax", "ymax")]
        return GroundTruthObject(str(image_id), int(cls), BoundingBox(*map(float, coords)))
    except (KeyError, ValueError, TypeError) as exc:
        raise ManifestError(f"{where}: bad annotation {entry!r}: {exc}") from exc


def load_manifest(path: str | Path, num_classes: int | None = None,
                  check_files: bool = True) -> DatasetManifest:
    """Read and validate a manifest.

    ``num_classes`` pins the expected label-space size; otherwise the
    manifest's own ``classes`` list (or ``num_classes`` key) decides, with
    200 as the default.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    base = path.resolve().parent

    if "classes" in data:
        classes = [str(c) for c in data["classes"]]
    else:
        classes = [f"class_{i}" for i in range(1, int(data.get("num_classes", DEFAULT_NUM_CLASSES)) + 1)]
    if num_classes is not None and len(classes) != num_classes:
        raise ManifestError(f"{path}: {len(classes)} classes, expected {num_classes}")

    raw_images = data.get("images") or []
    if not raw_images:
        raise ManifestError(f"{path}: manifest lists no images")
    images = []
    seen: set[str] = set()
    for item in raw_images:
        image_id = str(item["image_id"])
        if image_id in seen:
            raise ManifestError(f"{path}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        img_path = (base / item["path"]).resolve()
        if check_files and not img_path.is_file():
            raise ManifestError(f"{path}: image {image_id!r} missing file {img_path}")
        ctype = item.get("content_type") or content_type_for(img_path)
        images.append(ImageEntry(image_id, img_path, ctype))

    gt = []
    for n, entry in enumerate(data.get("annotations", []), 1):
        g = _annotation(entry, f"{path} annotation {n}")
        if g.image_id not in seen:
            raise ManifestError(f"{path}: annotation {n} references absent image {g.image_id!r}")
        if not 1 <= g.class_id <= len(classes):
            raise ManifestError(f"{path}: annotation {n} has unknown class {g.class_id}")
        gt.append(g)
    return DatasetManifest(images, classes, gt, source=path)


# --- synthetic fixtures -----------------------------------------------------

def generate_fixture(out_dir: str | Path, num_images: int = 20, num_classes: int = 5,
                     width: int = 32, height: int = 32, min_objects: int = 0,
                     max_objects: int = 3, seed: int = 0) -> DatasetManifest:
    """Write a reproducible synthetic dataset and return its manifest.

    Each image is a noisy random background with up to ``max_objects`` flat
    coloured rectangles; each rectangle is one ground-truth object. Output is
    byte-identical for a given set of arguments.
    """
    if num_images < 1 or num_classes < 1 or min_objects < 0 or max_objects < min_objects:
        raise InvalidInput("invalid fixture counts")
    if width < 4 or height < 4:
        raise InvalidInput("fixture images must be at least 4x4")
    out = Path(out_dir)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    images, gt = [], []
    for n in range(num_images):
        image_id = f"{n:06d}"
        base = rng.integers(0, 256, size=3)
        pix = np.clip(base + rng.integers(-24, 25, size=(height, width, 3)), 0, 255).astype(np.uint8)
        for _ in range(int(rng.integers(min_objects, max_objects + 1))):
            bw = int(rng.integers(max(2, width // 4), max(3, width * 3 // 5) + 1))
            bh = int(rng.integers(max(2, height // 4), max(3, height * 3 // 5) + 1))
            x0 = int(rng.integers(0, width - bw + 1))
            y0 = int(rng.integers(0, height - bh + 1))
            pix[y0 : y0 + bh, x0 : x0 + bw] = rng.integers(0, 256, size=3).astype(np.uint8)
            cls = int(rng.integers(1, num_classes + 1))
            gt.append(GroundTruthObject(image_id, cls, BoundingBox(float(x0), float(y0), float(x0 + bw), float(y0 + bh))))
        p = img_dir / f"{image_id}.ppm"
        p.write_bytes(encode_pnm(PixelMatrix(width, height, 3, pix)))
        images.append(ImageEntry(image_id, p.resolve(), PPM_TYPE))
    manifest = DatasetManifest(images, [f"class_{i}" for i in range(1, num_classes + 1)], gt)
    manifest.source = manifest.save(out / "manifest.json")
    return manifest
