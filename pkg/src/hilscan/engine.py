"""End-to-end pipeline: captures through profiler and classifier to alerts.

Both detectors run independently and their alerts are unioned: the
profiler watches per-device rates window by window, the classifier scores
every rendered payload chunk. Replay re-delivers recorded packets into
the in-process pipeline at a configurable speed; no raw sockets are
involved. Baseline refreshes run off an injectable clock so schedules are
testable without wall time, and a read-only HTTP status service exposes
profiles and the alert log.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from hilscan import __version__, binvis, classifier, profiler
from hilscan.capture import attribute_window
from hilscan.errors import BindFailure
from hilscan.profiler import ProfileKind, ProfilerConfig

logger = logging.getLogger(__name__)

SEVERITY_RANK = {"info": 0, "warning": 1, "critical": 2}

# profiler deltas at or above this percentage escalate to critical
CRITICAL_DELTA_PERCENT = 300.0
# classifier probabilities at or above this escalate to critical
CRITICAL_PROBABILITY = 0.9


@dataclass
class Alert:
    ts: float
    device: str  # "kind:value" or "unattributed"
    source: str  # "profiler" | "classifier"
    severity: str
    detail: dict

    def to_json_dict(self):
        return {
            "ts": datetime.fromtimestamp(self.ts, tz=timezone.utc).isoformat(),
            "ts_epoch": self.ts,
            "device": self.device,
            "source": self.source,
            "severity": self.severity,
            "detail": self.detail,
        }

    @classmethod
    def from_json_dict(cls, doc):
        ts = doc.get("ts_epoch")
        if ts is None:
            ts = datetime.fromisoformat(doc["ts"]).timestamp()
        return cls(float(ts), doc["device"], doc["source"], doc["severity"],
                   doc.get("detail", {}))


class AlertLog:
    """Append-only alert sink: in-memory list plus optional JSON-lines file."""

    def __init__(self, path=None):
        self._lock = threading.Lock()
        self._alerts: list[Alert] = []
        self._path = Path(path) if path else None
        self._fh = None
        if self._path is not None:
            if self._path.exists():
                for line in self._path.read_text().splitlines():
                    if line.strip():
                        self._alerts.append(Alert.from_json_dict(json.loads(line)))
            self._fh = open(self._path, "a", encoding="utf-8")

    def append(self, alert):
        with self._lock:
            self._alerts.append(alert)
            if self._fh is not None:
                self._fh.write(json.dumps(alert.to_json_dict()) + "\n")
                self._fh.flush()

    def since(self, ts):
        with self._lock:
            return [a for a in self._alerts if a.ts >= ts]

    def __len__(self):
        with self._lock:
            return len(self._alerts)

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


@dataclass
class EngineConfig:
    profiler: ProfilerConfig = field(default_factory=ProfilerConfig)
    model_path: str | None = None
    decision_threshold: float = 0.5
    refresh_intervals: dict[ProfileKind, int] = field(default_factory=lambda: {
        ProfileKind.HOURLY: 3600,
        ProfileKind.DAILY: 86400,
        ProfileKind.WEEKLY: 604800,
    })
    alert_sink_path: str | None = None
    chunk_size: int = binvis.DEFAULT_CHUNK_SIZE
    payload_only: bool = False
    id_mode: str = "ipv4"

    def __post_init__(self):
        h = self.refresh_intervals[ProfileKind.HOURLY]
        d = self.refresh_intervals[ProfileKind.DAILY]
        w = self.refresh_intervals[ProfileKind.WEEKLY]
        if not h < d < w:
            raise ValueError("refresh intervals must be strictly increasing H < D < W")

    @classmethod
    def from_json_dict(cls, doc):
        profiler_cfg = ProfilerConfig(
            threshold_percent=float(doc.get("threshold", 80.0)),
            capture_window_seconds=int(doc.get("window", 60)),
        )
        intervals = doc.get("refresh_intervals", {})
        return cls(
            profiler=profiler_cfg,
            model_path=doc.get("model"),
            decision_threshold=float(doc.get("decision_threshold", 0.5)),
            refresh_intervals={
                ProfileKind.HOURLY: int(intervals.get("H", 3600)),
                ProfileKind.DAILY: int(intervals.get("D", 86400)),
                ProfileKind.WEEKLY: int(intervals.get("W", 604800)),
            },
            alert_sink_path=doc.get("alerts"),
            chunk_size=int(doc.get("chunk_size", binvis.DEFAULT_CHUNK_SIZE)),
            payload_only=bool(doc.get("payload_only", False)),
            id_mode=str(doc.get("id_mode", "ipv4")),
        )


def _profiler_severity(report):
    worst = max((report.per_kind_delta[k] for k in report.flagged_kinds), default=0.0)
    if not math.isfinite(worst) or worst >= CRITICAL_DELTA_PERCENT:
        return "critical"
    return "warning"


def _windows_of(capture, window_len):
    """Consecutive [start, start+len) windows covering the capture."""
    if not capture.packets:
        return []
    first = capture.packets[0].ts_seconds
    last = max(p.timestamp for p in capture.packets)
    starts = []
    start = first
    while start <= last:
        starts.append(start)
        start += window_len
    return starts


def _stream_with_times(capture, payload_only):
    """Byte stream plus (cumulative offset, packet ts) markers for mapping
    chunk offsets back to the time the bytes were seen."""
    if payload_only:
        stream = binvis.capture_byte_stream(capture, payload_only=True)
        marks = [(0, capture.packets[0].timestamp)] if capture.packets else []
        return stream, marks
    parts, marks, offset = [], [], 0
    for pkt in capture.packets:
        marks.append((offset, pkt.timestamp))
        parts.append(pkt.data)
        offset += len(pkt.data)
    return b"".join(parts), marks


def run_offline(capture, profiles, model, config, rescan_hooks=(), alert_log=None,
                capture_id=""):
    """Run one capture through both detectors; returns alerts ordered by
    timestamp then source.

    Every out-of-profile window evaluation emits exactly one profiler
    alert (and fires the rescan hooks); every chunk at or above the
    decision threshold emits exactly one classifier alert. When an alert
    log is given, alerts are appended as produced so partial results
    survive an abort mid-run.
    """
    alerts = []

    def emit(alert):
        alerts.append(alert)
        if alert_log is not None:
            alert_log.append(alert)

    for window_start in _windows_of(capture, config.profiler.capture_window_seconds):
        result = attribute_window(capture, window_start,
                                  config.profiler.capture_window_seconds, config.id_mode)
        for device in sorted(result.tallies, key=str):
            tally = result.tallies[device]
            report = profiler.evaluate(device, tally, profiles.profile(device),
                                       config.profiler)
            if report.out_of_profile:
                detail = report.to_json_dict()
                detail["window_start"] = window_start
                detail["window_len"] = config.profiler.capture_window_seconds
                emit(Alert(float(window_start), str(device), "profiler",
                           _profiler_severity(report), detail))
                profiler.on_flag(report, rescan_hooks)

    if model is not None:
        stream, marks = _stream_with_times(capture, config.payload_only)
        offsets = [m[0] for m in marks]
        for index, chunk in enumerate(binvis.chunk_stream(stream, config.chunk_size,
                                                          capture_id=capture_id)):
            features = classifier.extract_features(binvis.render_chunk(chunk))
            prediction = classifier.predict(model, features, config.decision_threshold)
            if prediction.p_malicious >= config.decision_threshold:
                if marks:
                    ts = marks[bisect.bisect_right(offsets, chunk.origin[1]) - 1][1]
                else:
                    ts = 0.0
                severity = ("critical" if prediction.p_malicious >= CRITICAL_PROBABILITY
                            else "warning")
                emit(Alert(ts, "unattributed", "classifier", severity, {
                    "p_malicious": prediction.p_malicious,
                    "chunk_index": index,
                    "byte_offset": chunk.origin[1],
                    "capture_id": capture_id,
                    "pad_len": chunk.pad_len,
                }))

    alerts.sort(key=lambda a: (a.ts, a.source))
    return alerts


@dataclass
class ReplayPlan:
    capture_id: str
    speed: float = 1.0
    sink: object = None  # callable(RawPacket)

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError("replay speed must be positive")


@dataclass
class DeliveryRecord:
    index: int
    intended_offset: float  # seconds from replay start
    actual_offset: float


def replay(capture, plan):
    """Deliver packets to the plan's sink with recorded gaps divided by
    speed; returns the per-packet delivery log."""
    log = []
    if not capture.packets:
        return log
    first_ts = capture.packets[0].timestamp
    t0 = time.monotonic()
    for index, pkt in enumerate(capture.packets):
        intended = (pkt.timestamp - first_ts) / plan.speed
        delay = t0 + intended - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        if plan.sink is not None:
            plan.sink(pkt)
        log.append(DeliveryRecord(index, intended, time.monotonic() - t0))
    return log


class SystemClock:
    def now(self):
        return time.time()


class VirtualClock:
    """Deterministic clock for tests; advance() moves time forward."""

    def __init__(self, start=0.0):
        self._now = float(start)

    def now(self):
        return self._now

    def advance(self, seconds):
        if seconds < 0:
            raise ValueError("cannot advance a clock backwards")
        self._now += seconds
        return self._now


class RefreshScheduler:
    """Rebuilds baselines at each kind's interval boundary.

    poll() is the single entry point: it fires one refresh per kind whose
    boundary has passed since the last refresh; boundaries missed while
    nobody polled coalesce into that single refresh. start() runs poll in
    a daemon thread for wall-clock use.
    """

    def __init__(self, config, clock, store, tally_source):
        # tally_source(kind, now) -> iterable of WindowTally for the most
        # recent window of traffic, or None to skip this refresh
        self._config = config
        self._clock = clock
        self._store = store
        self._tally_source = tally_source
        now = clock.now()
        self._next_due = {kind: now + interval
                          for kind, interval in config.refresh_intervals.items()}
        self.refresh_counts = {kind: 0 for kind in self._next_due}
        self._thread = None
        self._stop = threading.Event()

    def poll(self):
        now = self._clock.now()
        fired = []
        for kind in (ProfileKind.HOURLY, ProfileKind.DAILY, ProfileKind.WEEKLY):
            if now < self._next_due[kind]:
                continue
            interval = self._config.refresh_intervals[kind]
            while self._next_due[kind] <= now:  # coalesce missed boundaries
                self._next_due[kind] += interval
            tallies = self._tally_source(kind, now)
            if tallies:
                profiler.build_baseline(tallies, kind, self._store, built_at=now,
                                        source_capture_id=f"refresh-{kind.value}")
            self.refresh_counts[kind] += 1
            fired.append(kind)
        return fired

    def start(self, poll_interval=1.0):
        if self._thread is not None:
            return self

        def loop():
            while not self._stop.wait(poll_interval):
                try:
                    self.poll()
                except Exception:
                    logger.exception("baseline refresh failed")

        self._thread = threading.Thread(target=loop, name="hilscan-refresh", daemon=True)
        self._thread.start()
        return self

    def cancel(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None


def schedule_refresh(config, clock, store, tally_source):
    """Create a refresh scheduler; call poll() or start() on the handle."""
    return RefreshScheduler(config, clock, store, tally_source)


class _StatusHandler(BaseHTTPRequestHandler):
    server_version = f"hilscan/{__version__}"

    def log_message(self, fmt, *args):
        logger.debug("status: " + fmt, *args)

    def _send(self, status, body, content_type="application/json"):
        blob = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def do_GET(self):
        url = urlparse(self.path)
        if url.path == "/health":
            self._send(200, json.dumps({"status": "ok", "version": __version__}))
        elif url.path == "/profiles":
            self._send(200, json.dumps(self.server.store.to_json_dict()))
        elif url.path == "/alerts":
            params = parse_qs(url.query)
            try:
                since = float(params.get("since", ["0"])[0])
            except ValueError:
                self._send(400, json.dumps({"error": "since must be a number"}))
                return
            lines = "".join(json.dumps(a.to_json_dict()) + "\n"
                            for a in self.server.alert_log.since(since))
            self._send(200, lines, content_type="application/x-ndjson")
        else:
            self._send(404, json.dumps({"error": "not found"}))

    def do_POST(self):
        self._send(405, json.dumps({"error": "status interface is read-only"}))

    do_PUT = do_DELETE = do_PATCH = do_POST


class StatusService:
    """Running read-only status server; close() shuts it down."""

    def __init__(self, server):
        self._server = server
        self.host, self.port = server.server_address[:2]
        self._thread = threading.Thread(target=server.serve_forever,
                                        name="hilscan-status", daemon=True)
        self._thread.start()

    @property
    def url(self):
        return f"http://{self.host}:{self.port}"

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)


def serve_status(store, alert_log, bind_address=("127.0.0.1", 0)):
    """Start the read-only status API; returns a StatusService handle."""
    if isinstance(bind_address, str):
        host, _, port = bind_address.rpartition(":")
        bind_address = (host or "127.0.0.1", int(port))
    try:
        server = ThreadingHTTPServer(bind_address, _StatusHandler)
    except OSError as exc:
        raise BindFailure(f"cannot bind {bind_address}: {exc}") from exc
    server.store = store
    server.alert_log = alert_log
    return StatusService(server)
