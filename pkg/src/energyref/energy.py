"""Power metering: sample types, a simulated meter and Watt-hour integration.

Trace files hold one ``t_seconds,watts`` sample per line in ascending time;
blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, InvalidInput, ParseError, StateError

SECONDS_PER_HOUR = 3600.0
DEFAULT_SAMPLE_RATE_HZ = 10.0


@dataclass(frozen=True, slots=True)
class PowerSample:
    t_seconds: float
    watts: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.watts) or self.watts < 0:
            raise InvalidInput(f"power {self.watts!r} W must be finite and >= 0")
        if not math.isfinite(self.t_seconds) or self.t_seconds < 0:
            raise InvalidInput(f"sample time {self.t_seconds!r} s must be finite and >= 0")


@dataclass(frozen=True, slots=True)
class EnergyReport:
    energy_wh: float
    window_start_s: float
    window_end_s: float
    sample_count: int


@dataclass(frozen=True)
class MeterProfile:
    """Configuration of the simulated meter.

    In ``synthetic`` mode the meter reads ``idle_watts`` until the referee
    reports contestant activity, then ``active_watts`` for ``activity_hold_s``
    after each activity mark, plus optional Gaussian noise. In ``replay`` mode
    samples come from ``trace_path``.
    """

    mode: str = "synthetic"
    trace_path: str | None = None
    idle_watts: float = 5.0
    active_watts: float = 5.0
    noise_stddev: float = 0.0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    activity_hold_s: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("synthetic", "replay"):
            raise ConfigError(f"unknown meter mode {self.mode!r}")
        if not self.sample_rate_hz > 0:
            raise ConfigError(f"sample_rate_hz {self.sample_rate_hz!r} must be > 0")
        if self.idle_watts < 0 or self.idle_watts > self.active_watts:
            raise ConfigError("meter profile needs 0 <= idle_watts <= active_watts")
        if self.noise_stddev < 0:
            raise ConfigError("noise_stddev must be >= 0")
        if self.mode == "replay" and not self.trace_path:
            raise ConfigError("replay meter profile needs trace_path")

    @classmethod
    def constant(cls, watts: float, **kw) -> "MeterProfile":
        return cls(idle_watts=watts, active_watts=watts, **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "MeterProfile":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown meter profile keys {sorted(unknown)}")
        return cls(**data)


def parse_trace(text: str, source: str | None = None) -> list[PowerSample]:
    samples: list[PowerSample] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ParseError(f"expected 't_seconds,watts', got {raw!r}", lineno, source)
        try:
            sample = PowerSample(float(parts[0]), float(parts[1]))
        except (ValueError, InvalidInput) as exc:
            raise ParseError(str(exc), lineno, source) from exc
        if samples and sample.t_seconds <= samples[-1].t_seconds:
            raise ParseError("timestamps must be strictly increasing", lineno, source)
        samples.append(sample)
    return samples


def read_trace(path: str | Path) -> list[PowerSample]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read power trace {path}: {exc}") from exc
    return parse_trace(text, str(path))


def format_trace(samples: Iterable[PowerSample]) -> str:
    return "".join(f"{s.t_seconds!r},{s.watts!r}\n" for s in samples)


def write_trace(path: str | Path, samples: Iterable[PowerSample]) -> None:
    Path(path).write_text("# t_seconds,watts\n" + format_trace(samples))


def _as_arrays(samples: Sequence[PowerSample]) -> tuple[np.ndarray, np.ndarray]:
    t = np.fromiter((s.t_seconds for s in samples), dtype=np.float64, count=len(samples))
    w = np.fromiter((s.watts for s in samples), dtype=np.float64, count=len(samples))
    return t, w


def integrate_energy(samples: Sequence[PowerSample], window_start_s: float,
                     window_end_s: float) -> EnergyReport:
    """Trapezoidal energy over ``[window_start_s, window_end_s]`` in Watt-hours.

    Power is linear between samples and held flat beyond the first and last
    sample, so a trace that ends early keeps its last reading until the
    window closes.
    """
    if not window_end_s >= window_start_s:
        raise InvalidInput(f"window end {window_end_s!r} precedes start {window_start_s!r}")
    t, w = _as_arrays(samples)
    if t.size > 1 and not np.all(np.diff(t) > 0):
        raise InvalidInput("power samples must be strictly increasing in time")
    inside = (t >= window_start_s) & (t <= window_end_s)
    count = int(inside.sum())
    if t.size == 0 or window_end_s == window_start_s:
        return EnergyReport(0.0, window_start_s, window_end_s, count)

    interior = t[(t > window_start_s) & (t < window_end_s)]
    points = np.concatenate(([window_start_s], interior, [window_end_s]))
    values = np.interp(points, t, w)
    joules = kernels.trapezoid(points, values)
    return EnergyReport(max(joules, 0.0) / SECONDS_PER_HOUR, window_start_s, window_end_s, count)


class SimulatedMeter:
    """Stand-in for a bench power meter, driven by an injectable monotonic clock.

    Sample values depend only on session-relative time and recorded activity,
    so the capture is synthesised when the meter stops. This yields the same
    samples a background sampler would have produced at ``sample_rate_hz``.
    """

    def __init__(self, profile: MeterProfile, clock: Callable[[], float] = time.monotonic):
        self.profile = profile
        self.clock = clock
        self._lock = threading.Lock()
        self._t0: float | None = None
        self._activity: list[float] = []
        self._trace: list[PowerSample] | None = None
        if profile.mode == "replay":
            self._trace = read_trace(profile.trace_path)  # type: ignore[arg-type]
            if not self._trace:
                raise ConfigError(f"power trace {profile.trace_path} has no samples")

    @property
    def active(self) -> bool:
        return self._t0 is not None

    def start(self, at: float | None = None) -> "SimulatedMeter":
        with self._lock:
            if self._t0 is not None:
                raise StateError("meter capture already active")
            self._t0 = self.clock() if at is None else at
            self._activity = []
        return self

    def note_activity(self, at: float | None = None) -> None:
        with self._lock:
            if self._t0 is None:
                return
            now = self.clock() if at is None else at
            self._activity.append(max(now - self._t0, 0.0))

    def stop(self, at: float | None = None) -> list[PowerSample]:
        """End the capture and return samples over ``[start, at]``."""
        with self._lock:
            if self._t0 is None:
                raise StateError("meter stop without an active capture")
            end = self.clock() if at is None else at
            duration = max(end - self._t0, 0.0)
            activity = sorted(self._activity)
            self._t0 = None
        if self._trace is not None:
            return [s for s in self._trace if s.t_seconds <= duration]
        return self._synthesize(duration, activity)

    def _synthesize(self, duration: float, activity: list[float]) -> list[PowerSample]:
        p = self.profile
        n = int(math.floor(duration * p.sample_rate_hz + 1e-9))
        times = np.arange(n + 1, dtype=np.float64) / p.sample_rate_hz
        if duration - times[-1] > 1e-9:
            times = np.append(times, duration)
        watts = np.full(times.shape, p.idle_watts)
        if activity and p.active_watts != p.idle_watts:
            marks = np.asarray(activity)
            # latest activity mark at or before each sample time
            idx = np.searchsorted(marks, times, side="right") - 1
            last = np.where(idx >= 0, marks[np.clip(idx, 0, None)], -np.inf)
            watts = np.where(times - last <= p.activity_hold_s, p.active_watts, p.idle_watts)
        if p.noise_stddev > 0:
            rng = np.random.default_rng(p.seed)
            watts = np.clip(watts + rng.normal(0.0, p.noise_stddev, watts.shape), 0.0, None)
        return [PowerSample(t, w) for t, w in zip(times.tolist(), watts.tolist())]


def meter_start(profile: MeterProfile, clock: Callable[[], float] = time.monotonic,
                at: float | None = None) -> SimulatedMeter:
    return SimulatedMeter(profile, clock).start(at)


def meter_stop(handle: SimulatedMeter, at: float | None = None) -> list[PowerSample]:
    return handle.stop(at)
