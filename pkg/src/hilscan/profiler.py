"""Per-device traffic-rate baselines and out-of-profile detection.

A device's rate metric is bytes transmitted divided by capture duration.
Baselines are kept per profile kind (hourly, daily, weekly) and a fresh
capture is compared against each: the deviation percentage is

    delta = |current - baseline| / baseline * 100

which is zero for identical rates and unbounded ("Infinite") when a
device with no recorded traffic starts transmitting. A device is out of
profile when any kind's delta strictly exceeds the configured threshold
(80% by default, over 60-second capture windows).
"""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from hilscan.capture import DeviceKey
from hilscan.errors import ZeroDuration

logger = logging.getLogger(__name__)

# bytes per second; kept as a bare float throughout
RateMetric = float

INFINITE = math.inf


class ProfileKind(str, Enum):
    HOURLY = "H"
    DAILY = "D"
    WEEKLY = "W"

    @classmethod
    def parse(cls, text):
        return cls(text.upper())


@dataclass
class Baseline:
    rate: RateMetric
    built_at: float
    source_capture_id: str = ""


@dataclass
class DeviceProfile:
    device: DeviceKey
    baselines: dict[ProfileKind, Baseline] = field(default_factory=dict)


@dataclass
class ProfilerConfig:
    threshold_percent: float = 80.0
    capture_window_seconds: int = 60
    literal_ratio: bool = False  # compatibility mode: delta = current/baseline*100

    def __post_init__(self):
        if self.threshold_percent <= 0:
            raise ValueError("threshold_percent must be positive")
        if self.capture_window_seconds <= 0:
            raise ValueError("capture_window_seconds must be positive")


@dataclass
class DeltaReport:
    device: DeviceKey
    current: RateMetric
    per_kind_delta: dict[ProfileKind, float]
    flagged_kinds: set[ProfileKind]
    out_of_profile: bool
    unprofiled: bool = False  # no baselines existed for the device

    def to_json_dict(self):
        return {
            "device": str(self.device),
            "current_rate": self.current,
            "deltas": {k.value: (d if math.isfinite(d) else "Infinite")
                       for k, d in self.per_kind_delta.items()},
            "flagged_kinds": sorted(k.value for k in self.flagged_kinds),
            "out_of_profile": self.out_of_profile,
            "unprofiled": self.unprofiled,
        }


def compute_rate(byte_count, duration_seconds):
    """Bytes per second over a capture of the given duration."""
    if duration_seconds <= 0:
        raise ZeroDuration(f"capture duration must be positive, got {duration_seconds}")
    if byte_count < 0:
        raise ValueError("byte count cannot be negative")
    return byte_count / duration_seconds


def compute_delta(current, baseline, literal_ratio=False):
    """Deviation percentage of a current rate from a baseline rate.

    Returns math.inf when there is a current rate but no baseline. The
    literal_ratio mode computes current/baseline*100 instead (100 means
    unchanged); it exists for compatibility and is never the default.
    """
    if not (math.isfinite(current) and math.isfinite(baseline)):
        raise ValueError("rates must be finite")
    if current < 0 or baseline < 0:
        raise ValueError("rates cannot be negative")
    if baseline == 0:
        if literal_ratio:
            return INFINITE if current > 0 else 0.0
        return 0.0 if current == 0 else INFINITE
    if literal_ratio:
        return current / baseline * 100.0
    return abs(current - baseline) / baseline * 100.0


class ProfileStore:
    """Device profiles with concurrent readers and serialized writers.

    Reads hand out copies, so an evaluation works on a consistent
    snapshot no matter what a concurrent refresh does.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._profiles: dict[DeviceKey, DeviceProfile] = {}

    def profile(self, device):
        """Snapshot of one device's profile (empty if unknown)."""
        with self._lock:
            prof = self._profiles.get(device)
            if prof is None:
                return DeviceProfile(device)
            return DeviceProfile(device, dict(prof.baselines))

    def devices(self):
        with self._lock:
            return sorted(self._profiles, key=str)

    def set_baseline(self, device, kind, baseline):
        with self._lock:
            prof = self._profiles.setdefault(device, DeviceProfile(device))
            prof.baselines[kind] = baseline

    def snapshot(self):
        """Copy of every profile, keyed by device."""
        with self._lock:
            return {dev: DeviceProfile(dev, dict(p.baselines))
                    for dev, p in self._profiles.items()}

    # persistence: {device -> {kind -> {rate, built_at, source}}}

    def to_json_dict(self):
        snap = self.snapshot()
        return {
            str(dev): {
                kind.value: {
                    "rate": b.rate,
                    "built_at": b.built_at,
                    "source": b.source_capture_id,
                }
                for kind, b in sorted(prof.baselines.items(), key=lambda kv: kv[0].value)
            }
            for dev, prof in sorted(snap.items(), key=lambda kv: str(kv[0]))
        }

    @classmethod
    def from_json_dict(cls, doc):
        store = cls()
        for dev_text, kinds in doc.items():
            device = DeviceKey.parse(dev_text)
            for kind_text, entry in kinds.items():
                store.set_baseline(
                    device,
                    ProfileKind.parse(kind_text),
                    Baseline(float(entry["rate"]), float(entry["built_at"]),
                             str(entry.get("source", ""))),
                )
        return store

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def build_baseline(tallies, kind, store, built_at=0.0, source_capture_id="",
                   counting="tx"):
    """Replace the `kind` baseline of every tallied device in the store.

    The rate is bytes counted over the tally's window length; `counting`
    selects tx (default), rx, or both directions. Other kinds are left
    untouched.
    """
    if counting not in ("tx", "rx", "both"):
        raise ValueError(f"unknown counting mode {counting!r}")
    for tally in tallies:
        if counting == "tx":
            n = tally.tx_bytes
        elif counting == "rx":
            n = tally.rx_bytes
        else:
            n = tally.tx_bytes + tally.rx_bytes
        rate = compute_rate(n, tally.window_len)
        store.set_baseline(tally.device, kind,
                           Baseline(rate, built_at, source_capture_id))
    return store


def evaluate(device, current_tally, profile, config, counting="tx"):
    """Compare a device's current window against its baselines.

    Deltas are computed for every kind with a baseline; a kind is flagged
    when its delta strictly exceeds the threshold (Infinite always
    flags). A device with no baselines is reported unprofiled, never
    flagged, so unseen devices do not alarm on first sight.
    """
    if current_tally.window_len <= 0:
        raise ZeroDuration("current tally has no duration")
    if counting == "tx":
        n = current_tally.tx_bytes
    elif counting == "rx":
        n = current_tally.rx_bytes
    else:
        n = current_tally.tx_bytes + current_tally.rx_bytes
    current = compute_rate(n, current_tally.window_len)

    if not profile.baselines:
        logger.info("UnprofiledDevice: %s has no baselines, skipping flag checks", device)
        return DeltaReport(device, current, {}, set(), False, unprofiled=True)

    deltas = {}
    flagged = set()
    for kind, baseline in profile.baselines.items():
        delta = compute_delta(current, baseline.rate, literal_ratio=config.literal_ratio)
        deltas[kind] = delta
        if delta > config.threshold_percent:
            flagged.add(kind)
    return DeltaReport(device, current, deltas, flagged, bool(flagged))


def on_flag(report, hooks):
    """Invoke every rescan hook once with the flagged report.

    Hook failures are logged and isolated; they never propagate and never
    prevent later hooks from running.
    """
    for hook in hooks:
        try:
            hook(report)
        except Exception:
            logger.exception("rescan hook %r failed for %s", hook, report.device)
