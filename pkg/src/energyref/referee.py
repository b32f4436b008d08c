"""The referee: session lifecycle, image serving, result intake and scoring.

:class:`Referee` holds all state and is driven by an injectable monotonic
clock, so tests can replay arbitrary request timings. :func:`make_server`
wraps it in a threaded HTTP/1.1 server exposing::

    POST /login                    {"team": ..., "secret": ...} -> {"token": ...}
    GET  /image/{index}            raw image bytes, X-Image-Id header
    GET  /images?offset=&count=    application/zip, entries named by image_id
    POST /results                  detection rows or JSON array -> {"accepted": n}
    POST /logout                   closes the session and stops the meter
    GET  /score                    final report of a closed session

Authenticated requests carry ``Authorization: Bearer <token>``.
"""

from __future__ import annotations

import hashlib
import hmac
import io
import json
import logging
import secrets
import threading
import time
import zipfile
from dataclasses import asdict, dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Iterable, Mapping
from urllib.parse import parse_qs, urlsplit

from .dataset import DatasetManifest, load_manifest
from .energy import (EnergyReport, MeterProfile, PowerSample, SimulatedMeter, integrate_energy,
                     write_trace)
from .errors import (AuthenticationError, ConfigError, ConflictError, EnergyRefError,
                     InvalidRequest, NotFound, SessionError, SessionExpired, StateError)
from .scoring import Detection, ScoreReport, build_score_report, mean_average_precision
from .wire import format_detections, parse_detections

log = logging.getLogger(__name__)

DEFAULT_SESSION_SECONDS = 600.0
DEFAULT_BATCH_MAX = 100
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def submission_digest(payload: bytes) -> str:
    """Lowercase hex MD5 of a submission, used to spot duplicate uploads."""
    return hashlib.md5(payload, usedforsecurity=False).hexdigest()


def group_duplicate_submissions(payloads: Mapping[str, bytes]) -> list[list[str]]:
    """Names of submissions sharing a digest, only groups with two or more members."""
    groups: dict[str, list[str]] = {}
    for name, data in payloads.items():
        groups.setdefault(submission_digest(data), []).append(name)
    return [sorted(g) for g in groups.values() if len(g) > 1]


@dataclass
class CompetitionConfig:
    manifest: Path
    session_seconds: float = DEFAULT_SESSION_SECONDS
    batch_max: int = DEFAULT_BATCH_MAX
    meter: MeterProfile = field(default_factory=MeterProfile)
    listen: str = "127.0.0.1:8080"
    teams: dict[str, str] = field(default_factory=dict)
    report_dir: Path | None = None
    num_classes: int | None = None

    def __post_init__(self) -> None:
        if not self.session_seconds > 0:
            raise ConfigError("session_seconds must be > 0")
        if self.batch_max < 1:
            raise ConfigError("batch_max must be >= 1")

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        try:
            return host or "127.0.0.1", int(port)
        except ValueError:
            raise ConfigError(f"bad listen address {self.listen!r}") from None


def load_config(path: str | Path) -> CompetitionConfig:
    """Read a JSON config; relative paths resolve against the config file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    base = path.resolve().parent
    if "manifest" not in data:
        raise ConfigError(f"{path}: 'manifest' is required")
    meter = dict(data.get("meter", {}))
    if meter.get("trace_path"):
        meter["trace_path"] = str(base / meter["trace_path"])
    try:
        return CompetitionConfig(
            manifest=base / data["manifest"],
            session_seconds=float(data.get("session_seconds", DEFAULT_SESSION_SECONDS)),
            batch_max=int(data.get("batch_max", DEFAULT_BATCH_MAX)),
            meter=MeterProfile.from_dict(meter),
            listen=str(data.get("listen", "127.0.0.1:8080")),
            teams={str(k): str(v) for k, v in data.get("teams", {}).items()},
            report_dir=base / data["report_dir"] if data.get("report_dir") else None,
            num_classes=data.get("num_classes"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class Session:
    token: str
    team_id: str
    start_time: float
    deadline_s: float
    meter: SimulatedMeter
    status: str = "active"
    fetched: set[int] = field(default_factory=set)
    submissions: list[tuple[float, Detection]] = field(default_factory=list)
    close_time: float | None = None
    samples: list[PowerSample] = field(default_factory=list)
    report: ScoreReport | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def window_s(self) -> float:
        return (self.close_time or self.start_time) - self.start_time


def score_run(detections: Iterable[Detection], manifest: DatasetManifest, energy: EnergyReport,
              label: str = "") -> ScoreReport:
    """Score a finished run. Shared by the online referee and offline scoring."""
    detections = list(detections)
    map_value = mean_average_precision(detections, manifest.ground_truth, manifest.num_classes,
                                       image_ids=manifest.image_ids)
    processed = len({d.image_id for d in detections})
    return build_score_report(map_value, energy.energy_wh, processed, len(manifest.images),
                              label, energy.window_start_s, energy.window_end_s)


class Referee:
    def __init__(self, manifest: DatasetManifest, *, teams: Mapping[str, str],
                 session_seconds: float = DEFAULT_SESSION_SECONDS,
                 batch_max: int = DEFAULT_BATCH_MAX,
                 meter_profile: MeterProfile | None = None,
                 clock: Callable[[], float] = time.monotonic,
                 report_dir: str | Path | None = None):
        self.manifest = manifest
        self.teams = dict(teams)
        self.session_seconds = float(session_seconds)
        self.batch_max = int(batch_max)
        self.meter_profile = meter_profile or MeterProfile()
        self.clock = clock
        self.report_dir = Path(report_dir) if report_dir else None
        self._payloads = [e.path.read_bytes() for e in manifest.images]
        self._index = {e.image_id: i for i, e in enumerate(manifest.images)}
        self._sessions: dict[str, Session] = {}
        self._active_by_team: dict[str, str] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, config: CompetitionConfig, clock: Callable[[], float] = time.monotonic):
        manifest = load_manifest(config.manifest, config.num_classes)
        return cls(manifest, teams=config.teams, session_seconds=config.session_seconds,
                   batch_max=config.batch_max, meter_profile=config.meter, clock=clock,
                   report_dir=config.report_dir)

    @property
    def num_images(self) -> int:
        return len(self._payloads)

    # -- session bookkeeping ------------------------------------------------

    def _session(self, token: str) -> Session:
        session = self._sessions.get(token)
        if session is None:
            raise AuthenticationError("unknown session token")
        return session

    def _close_locked(self, session: Session, at: float) -> None:
        # caller holds session.lock
        if session.status == "closed":
            return
        end = min(at, session.deadline_s)
        session.samples = session.meter.stop(at=end)
        session.close_time = end
        session.status = "closed"
        with self._lock:
            if self._active_by_team.get(session.team_id) == session.token:
                del self._active_by_team[session.team_id]
        log.info("session %s for %s closed after %.3f s", session.token[:8], session.team_id,
                 session.window_s)

    def _require_active(self, session: Session, now: float) -> None:
        # caller holds session.lock
        if session.status == "closed":
            raise SessionError("session is closed")
        if now > session.deadline_s:
            self._close_locked(session, session.deadline_s)
            raise SessionExpired("session deadline has passed")

    def close_expired(self) -> int:
        """Close every active session whose deadline has passed; returns how many."""
        now = self.clock()
        closed = 0
        with self._lock:
            active = [self._sessions[t] for t in self._active_by_team.values()]
        for session in active:
            with session.lock:
                if session.status == "active" and now > session.deadline_s:
                    self._close_locked(session, session.deadline_s)
                    closed += 1
        return closed

    # -- protocol operations -----------------------------------------------

    def login(self, team_id: str, secret: str) -> str:
        expected = self.teams.get(team_id)
        if expected is None or not hmac.compare_digest(expected.encode(), str(secret).encode()):
            raise AuthenticationError("bad team credentials")
        self.close_expired()
        with self._lock:
            if team_id in self._active_by_team:
                raise ConflictError(f"team {team_id!r} already has an active session")
            token = secrets.token_hex(16)
            now = self.clock()
            meter = SimulatedMeter(self.meter_profile, self.clock).start(at=now)
            session = Session(token, team_id, now, now + self.session_seconds, meter)
            self._sessions[token] = session
            self._active_by_team[team_id] = token
        log.info("team %s logged in, session %s", team_id, token[:8])
        return token

    def _index_ok(self, index: int) -> None:
        if not 0 <= index < len(self._payloads):
            raise NotFound(f"image index {index} outside 0..{len(self._payloads) - 1}")

    def get_image(self, token: str, index: int) -> tuple[str, bytes, str]:
        """Return ``(image_id, payload, content_type)`` for one image."""
        session = self._session(token)
        with session.lock:
            now = self.clock()
            self._require_active(session, now)
            self._index_ok(index)
            session.fetched.add(index)
            session.meter.note_activity(now)
        entry = self.manifest.images[index]
        return entry.image_id, self._payloads[index], entry.content_type

    def get_batch(self, token: str, offset: int, count: int) -> bytes:
        """Zip of images ``offset .. offset+count-1``, truncated at the end of the set."""
        if not 1 <= count <= self.batch_max:
            raise InvalidRequest(f"count {count} outside 1..{self.batch_max}")
        session = self._session(token)
        with session.lock:
            now = self.clock()
            self._require_active(session, now)
            self._index_ok(offset)
            stop = min(offset + count, len(self._payloads))
            session.fetched.update(range(offset, stop))
            session.meter.note_activity(now)
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
            for i in range(offset, stop):
                info = zipfile.ZipInfo(self.manifest.images[i].image_id, _ZIP_DATE)
                zf.writestr(info, self._payloads[i])
        return buf.getvalue()

    def post_results(self, token: str, payload: str | bytes) -> int:
        """Append parsed detections to the session; the whole payload is rejected on any error."""
        session = self._session(token)
        dets = parse_detections(payload, self._index, self.manifest.num_classes, "results")
        with session.lock:
            now = self.clock()
            self._require_active(session, now)
            session.submissions.extend((now, d) for d in dets)
            session.meter.note_activity(now)
        return len(dets)

    def logout(self, token: str) -> dict:
        session = self._session(token)
        with session.lock:
            self._close_locked(session, self.clock())
            return {"status": "closed", "window_s": session.window_s}

    def finalize(self, token: str) -> ScoreReport:
        session = self._session(token)
        with session.lock:
            if session.status != "closed":
                # a session past its deadline is closed on observation
                if self.clock() > session.deadline_s:
                    self._close_locked(session, session.deadline_s)
                else:
                    raise StateError("cannot finalize an active session")
            if session.report is None:
                session.report = self._score(session)
                self._persist(session)
            return session.report

    def _score(self, session: Session) -> ScoreReport:
        energy = integrate_energy(session.samples, 0.0, session.window_s)
        dets = [d for arrival, d in session.submissions if arrival <= session.deadline_s]
        return score_run(dets, self.manifest, energy, label=session.team_id)

    def accepted_detections(self, token: str) -> list[Detection]:
        session = self._session(token)
        with session.lock:
            return [d for _, d in session.submissions]

    def _persist(self, session: Session) -> None:
        if self.report_dir is None:
            return
        self.report_dir.mkdir(parents=True, exist_ok=True)
        stem = self.report_dir / f"{session.team_id}-{session.token[:8]}"
        stem.with_suffix(".report").write_text(session.report.dumps())
        stem.with_suffix(".detections").write_text(
            format_detections(d for _, d in session.submissions))
        write_trace(stem.with_suffix(".trace"), session.samples)
        log.info("report persisted to %s", stem.with_suffix(".report"))

    def shutdown(self) -> list[ScoreReport]:
        """Close and finalize every open session (used on process exit)."""
        reports = []
        for token, session in list(self._sessions.items()):
            with session.lock:
                self._close_locked(session, self.clock())
            reports.append(self.finalize(token))
        return reports

    def session(self, token: str) -> Session:
        return self._session(token)


# --- HTTP transport -------------------------------------------------------------

class RefereeHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "RefereeServer"

    def log_message(self, fmt, *args):  # noqa: D401 - route to logging
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: bytes, content_type: str, headers: Mapping[str, str] = {}):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for k, v in headers.items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, obj) -> None:
        self._send(status, json.dumps(obj).encode(), "application/json")

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _token(self) -> str:
        auth = self.headers.get("Authorization", "")
        scheme, _, token = auth.partition(" ")
        if scheme.lower() != "bearer" or not token.strip():
            raise AuthenticationError("missing bearer token")
        return token.strip()

    def _dispatch(self, method: str) -> None:
        referee = self.server.referee
        url = urlsplit(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            body = self._body() if method == "POST" else b""
            if method == "POST" and parts == ["login"]:
                try:
                    creds = json.loads(body or b"{}")
                    team, secret = creds["team"], creds["secret"]
                except (ValueError, KeyError, TypeError):
                    raise InvalidRequest("login body must be JSON with team and secret") from None
                token = referee.login(str(team), str(secret))
                self._json(200, {"token": token, "session_seconds": referee.session_seconds,
                                 "num_images": referee.num_images, "batch_max": referee.batch_max})
            elif method == "GET" and len(parts) == 2 and parts[0] == "image":
                try:
                    index = int(parts[1])
                except ValueError:
                    raise NotFound(f"bad image index {parts[1]!r}") from None
                image_id, data, ctype = referee.get_image(self._token(), index)
                self._send(200, data, ctype, {"X-Image-Id": image_id})
            elif method == "GET" and parts == ["images"]:
                q = parse_qs(url.query)
                try:
                    offset = int(q.get("offset", ["0"])[0])
                    count = int(q.get("count", [str(referee.batch_max)])[0])
                except ValueError:
                    raise InvalidRequest("offset and count must be integers") from None
                self._send(200, referee.get_batch(self._token(), offset, count), "application/zip")
            elif method == "POST" and parts == ["results"]:
                self._json(200, {"accepted": referee.post_results(self._token(), body)})
            elif method == "POST" and parts == ["logout"]:
                self._json(200, referee.logout(self._token()))
            elif method == "GET" and parts == ["score"]:
                self._json(200, asdict(referee.finalize(self._token())))
            else:
                raise NotFound(f"no route for {method} {url.path}")
        except EnergyRefError as exc:
            self._json(exc.http_status, {"error": exc.category, "message": str(exc)})
        except Exception as exc:  # keep the server alive on handler bugs
            log.exception("internal error handling %s %s", method, self.path)
            self._json(500, {"error": "internal", "message": str(exc)})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


class RefereeServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], referee: Referee):
        self.referee = referee
        super().__init__(address, RefereeHandler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


def make_server(referee: Referee, host: str = "127.0.0.1", port: int = 0) -> RefereeServer:
    return RefereeServer((host, port), referee)


def start_reaper(referee: Referee, interval_s: float = 0.5) -> threading.Event:
    """Background thread closing sessions at their deadline; set the event to stop it."""
    stop = threading.Event()

    def run():
        while not stop.wait(interval_s):
            referee.close_expired()

    threading.Thread(target=run, name="session-reaper", daemon=True).start()
    return stop
