"""Contestant-side SDK and mock contestants.

Mock contestants never run a detector. They read the ground truth from the
manifest and degrade it according to a :class:`ContestantProfile`, which
stands in for the accuracy, latency and batching behaviour of a real entry.
"""

from __future__ import annotations

import http.client
import io
import json
import logging
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence
from urllib.parse import urlsplit

import numpy as np

from .dataset import DatasetManifest
from .errors import ConfigError, EnergyRefError, ParseError
from .scoring import BoundingBox, Detection, GroundTruthObject
from .wire import format_detections

log = logging.getLogger(__name__)

STRATEGIES = ("oracle", "noisy", "lazy", "slow")


class RefereeHTTPError(EnergyRefError):
    def __init__(self, status: int, category: str, message: str):
        super().__init__(f"{status} {category}: {message}")
        self.status = status
        self.category = category
        self.http_status = status


def unzip_batch(archive: bytes) -> list[tuple[str, bytes]]:
    """Entries of a batch archive in archive order as ``(image_id, payload)``.

    The whole archive is read and CRC-checked before anything is returned.
    """
    try:
        with zipfile.ZipFile(io.BytesIO(archive)) as zf:
            return [(info.filename, zf.read(info)) for info in zf.infolist()]
    except (zipfile.BadZipFile, zipfile.LargeZipFile, EOFError, OSError, ValueError) as exc:
        raise ParseError(f"corrupt batch archive: {exc}") from exc


class RefereeClient:
    """Thin HTTP client over one persistent connection."""

    def __init__(self, address: str, timeout: float = 30.0, token: str | None = None):
        if "://" not in address:
            address = "http://" + address
        parts = urlsplit(address)
        self.host = parts.hostname or "127.0.0.1"
        self.port = parts.port or 80
        self.timeout = timeout
        self.token = token
        self._conn: http.client.HTTPConnection | None = None

    def _connection(self) -> http.client.HTTPConnection:
        if self._conn is None:
            self._conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
        return self._conn

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def request(self, method: str, path: str, body: bytes | None = None,
                content_type: str | None = None) -> tuple[bytes, http.client.HTTPResponse]:
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        if content_type:
            headers["Content-Type"] = content_type
        for attempt in (0, 1):
            conn = self._connection()
            try:
                conn.request(method, path, body=body, headers=headers)
                resp = conn.getresponse()
                data = resp.read()
                break
            except (http.client.RemoteDisconnected, BrokenPipeError, ConnectionResetError):
                # stale keep-alive connection; reconnect once
                self.close()
                if attempt:
                    raise
        if resp.status >= 400:
            try:
                err = json.loads(data)
                raise RefereeHTTPError(resp.status, err.get("error", "error"), err.get("message", ""))
            except (ValueError, AttributeError):
                raise RefereeHTTPError(resp.status, "error", data[:200].decode(errors="replace")) from None
        return data, resp

    def login(self, team: str, secret: str) -> dict:
        data, _ = self.request("POST", "/login", json.dumps({"team": team, "secret": secret}).encode(),
                               "application/json")
        info = json.loads(data)
        self.token = info["token"]
        return info

    def get_image(self, index: int) -> tuple[str, bytes]:
        data, resp = self.request("GET", f"/image/{index}")
        return resp.getheader("X-Image-Id", str(index)), data

    def get_batch(self, offset: int, count: int) -> bytes:
        data, _ = self.request("GET", f"/images?offset={offset}&count={count}")
        return data

    def post_results(self, detections: Sequence[Detection]) -> int:
        body = format_detections(detections).encode()
        data, _ = self.request("POST", "/results", body, "text/plain")
        return int(json.loads(data)["accepted"])

    def logout(self) -> dict:
        data, _ = self.request("POST", "/logout")
        return json.loads(data)

    def score(self) -> dict:
        data, _ = self.request("GET", "/score")
        return json.loads(data)


@dataclass(frozen=True)
class ContestantProfile:
    strategy: str = "oracle"
    box_jitter_px: float = 0.0
    label_flip_prob: float = 0.0
    drop_prob: float = 0.0
    per_image_delay_ms: float = 0.0
    batch_size: int = 100
    confidence_model: str = "constant"
    confidence: float = 1.0
    # fraction of the test set processed before logging out
    max_fraction: float = 1.0
    pipeline: bool = False

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; pick one of {STRATEGIES}")
        for name in ("label_flip_prob", "drop_prob", "max_fraction", "confidence"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.box_jitter_px < 0 or self.per_image_delay_ms < 0:
            raise ConfigError("box_jitter_px and per_image_delay_ms must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.confidence_model not in ("constant", "sampled"):
            raise ConfigError(f"unknown confidence_model {self.confidence_model!r}")

    @classmethod
    def preset(cls, strategy: str, **overrides) -> "ContestantProfile":
        base = {
            "oracle": {},
            "noisy": dict(box_jitter_px=2.0, label_flip_prob=0.1, drop_prob=0.1,
                          confidence_model="sampled"),
            "lazy": dict(max_fraction=0.5),
            "slow": dict(per_image_delay_ms=50.0),
        }[strategy] if strategy in STRATEGIES else {}
        return cls(strategy=strategy, **{**base, **overrides})

    @classmethod
    def from_dict(cls, data: dict) -> "ContestantProfile":
        data = dict(data)
        strategy = data.pop("strategy", "oracle")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown profile keys {sorted(unknown)}")
        return cls.preset(strategy, **data)


@dataclass
class RunSummary:
    images_fetched: int = 0
    detections_posted: int = 0
    detections_rejected: int = 0
    elapsed_s: float = 0.0
    partial: bool = False
    error: str = ""
    token: str = ""
    notes: list[str] = field(default_factory=list)


class MockDetector:
    """Turns ground truth into degraded detections, deterministic for a seed.

    Every object consumes the same random draws whatever the probabilities,
    so raising ``drop_prob`` under a fixed seed only removes detections.
    """

    def __init__(self, profile: ContestantProfile, num_classes: int, seed: int = 0):
        self.profile = profile
        self.num_classes = num_classes
        self.rng = np.random.default_rng(seed)

    def detect(self, objects: Sequence[GroundTruthObject]) -> list[Detection]:
        p = self.profile
        out = []
        for g in objects:
            u_drop, u_flip, u_conf = self.rng.random(3)
            shift = self.rng.integers(1, max(self.num_classes, 2))
            jitter = self.rng.uniform(-1.0, 1.0, 4) * p.box_jitter_px
            if u_drop < p.drop_prob:
                continue
            cls = g.class_id
            if u_flip < p.label_flip_prob and self.num_classes > 1:
                cls = (cls - 1 + int(shift)) % self.num_classes + 1
            x0, y0, x1, y1 = (max(c + d, 0.0) for c, d in zip(g.box.as_tuple(), jitter))
            if x1 <= x0:
                x1 = x0 + 1.0
            if y1 <= y0:
                y1 = y0 + 1.0
            conf = p.confidence if p.confidence_model == "constant" else 0.05 + 0.95 * float(u_conf)
            out.append(Detection(g.image_id, cls, conf, BoundingBox(x0, y0, x1, y1)))
        return out


def _batches(total: int, size: int) -> Iterator[tuple[int, int]]:
    for offset in range(0, total, size):
        yield offset, min(size, total - offset)


def run_contestant(profile: ContestantProfile, address: str, credentials: tuple[str, str],
                   manifest: DatasetManifest, seed: int = 0, timeout: float = 30.0) -> RunSummary:
    """Play one full session against a referee: login, fetch, post, logout.

    Network failures end the run early with ``partial`` set; post-deadline
    rejections are counted rather than raised.
    """
    summary = RunSummary()
    gt = manifest.ground_truth_by_image()
    detector = MockDetector(profile, manifest.num_classes, seed)
    client = RefereeClient(address, timeout)
    t0 = time.monotonic()
    pool = ThreadPoolExecutor(max_workers=1) if profile.pipeline else None
    fetcher: RefereeClient | None = None
    try:
        info = client.login(*credentials)
        summary.token = client.token or ""
        total = int(info["num_images"])
        limit = int(round(total * profile.max_fraction))
        size = min(profile.batch_size, int(info.get("batch_max", profile.batch_size)))
        plan = list(_batches(limit, size))
        if pool is not None:
            fetcher = RefereeClient(address, timeout, token=client.token)
        pending = pool.submit(fetcher.get_batch, *plan[0]) if pool and plan else None
        for k, (offset, count) in enumerate(plan):
            if pending is not None:
                archive = pending.result()
                pending = pool.submit(fetcher.get_batch, *plan[k + 1]) if k + 1 < len(plan) else None
            else:
                archive = client.get_batch(offset, count)
            entries = unzip_batch(archive)
            summary.images_fetched += len(entries)
            dets: list[Detection] = []
            for image_id, _payload in entries:
                if profile.per_image_delay_ms:
                    time.sleep(profile.per_image_delay_ms / 1000.0)
                dets.extend(detector.detect(gt.get(image_id, [])))
            if dets:
                try:
                    summary.detections_posted += client.post_results(dets)
                except RefereeHTTPError as exc:
                    if exc.status != 403:
                        raise
                    summary.detections_rejected += len(dets)
                    summary.notes.append(f"results rejected: {exc}")
                    break
    except RefereeHTTPError as exc:
        if exc.status == 403:
            summary.notes.append(f"session ended: {exc}")
        else:
            summary.partial, summary.error = True, str(exc)
    except (OSError, http.client.HTTPException, ParseError) as exc:
        summary.partial, summary.error = True, f"{type(exc).__name__}: {exc}"
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
        if fetcher is not None:
            fetcher.close()
        if client.token:
            try:
                client.logout()
            except (OSError, http.client.HTTPException, EnergyRefError) as exc:
                summary.notes.append(f"logout failed: {exc}")
        client.close()
        summary.elapsed_s = time.monotonic() - t0
    if summary.partial:
        log.warning("contestant run incomplete: %s", summary.error)
    return summary


def with_overrides(profile: ContestantProfile, **kw) -> ContestantProfile:
    return replace(profile, **{k: v for k, v in kw.items() if v is not None})
