"""Service inventory and vulnerability matching.

The feed is a normalized JSON array of records (id, product, version_min,
version_max, severity, summary); converters from richer upstream formats
plug in ahead of ingest. Matching is deliberately strict: exact product
name plus an inclusive dotted-version range. A substring product mode
exists for exploratory use only.
"""

from __future__ import annotations

import json
import logging
import re
import socket
import time
from dataclasses import dataclass, field

from hilscan.capture import DeviceKey
from hilscan.errors import BackendUnavailable, FeedUnparseable

logger = logging.getLogger(__name__)

CVE_ID_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")

SEVERITIES = ("low", "medium", "high", "critical")


@dataclass
class ServiceRecord:
    device: DeviceKey
    port: int
    transport: str  # "tcp" | "udp"
    product: str    # lowercase; empty when a probe saw an open port but no banner
    version: str = ""

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")
        if self.transport not in ("tcp", "udp"):
            raise ValueError(f"unknown transport {self.transport!r}")
        self.product = self.product.lower()

    def to_json_dict(self):
        return {"device": str(self.device), "port": self.port,
                "transport": self.transport, "product": self.product,
                "version": self.version}


@dataclass
class CveRecord:
    id: str
    product: str
    version_min: str
    version_max: str
    severity: str
    summary: str = ""

    def to_json_dict(self):
        return {"id": self.id, "product": self.product,
                "version_min": self.version_min, "version_max": self.version_max,
                "severity": self.severity, "summary": self.summary}


@dataclass
class VulnReport:
    device: DeviceKey | None
    matches: list[tuple[ServiceRecord, CveRecord]]
    generated_at: float

    def to_json_dict(self):
        return {
            "device": str(self.device) if self.device else None,
            "generated_at": self.generated_at,
            "matches": [{"service": s.to_json_dict(), "cve": c.to_json_dict()}
                        for s, c in self.matches],
        }


def version_key(version):
    """Total-order sort key for dotted version strings.

    Segments split on dots; numeric segments compare numerically and sort
    before non-numeric ones, which compare lexicographically.
    """
    key = []
    for segment in version.split("."):
        if segment.isdigit():
            key.append((0, int(segment), ""))
        else:
            key.append((1, 0, segment))
    return tuple(key)


@dataclass
class CveFeed:
    records: list[CveRecord]
    skipped: int = 0


def _well_formed(entry):
    if not isinstance(entry, dict):
        return None
    try:
        cve_id = str(entry["id"])
        product = str(entry["product"]).lower()
        vmin = str(entry["version_min"])
        vmax = str(entry["version_max"])
        severity = str(entry["severity"]).lower()
        summary = str(entry.get("summary", ""))
    except (KeyError, TypeError):
        return None
    if not CVE_ID_RE.match(cve_id) or not product or severity not in SEVERITIES:
        return None
    if version_key(vmin) > version_key(vmax):
        return None
    return CveRecord(cve_id, product, vmin, vmax, severity, summary)


def ingest_cve_feed(document):
    """Parse a feed document; malformed entries are skipped and counted."""
    if isinstance(document, (bytes, bytearray)):
        document = document.decode("utf-8", errors="replace")
    try:
        parsed = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FeedUnparseable(f"feed is not valid JSON: {exc}") from exc
    if not isinstance(parsed, list):
        raise FeedUnparseable("feed must be a JSON array of records")
    feed = CveFeed([])
    for entry in parsed:
        record = _well_formed(entry)
        if record is None:
            feed.skipped += 1
        else:
            feed.records.append(record)
    if feed.skipped:
        logger.warning("cve feed: skipped %d malformed entries", feed.skipped)
    return feed


class FixtureScanBackend:
    """Echoes services from a JSON inventory: {device -> [service...]}."""

    def __init__(self, inventory):
        if isinstance(inventory, (str, bytes)) or hasattr(inventory, "read_text"):
            try:
                with open(inventory, "r", encoding="utf-8") as fh:
                    inventory = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise BackendUnavailable(f"cannot load inventory file: {exc}") from exc
        if not isinstance(inventory, dict):
            raise BackendUnavailable("inventory must map device -> service list")
        self._inventory = inventory

    def scan(self, device):
        services = []
        for entry in self._inventory.get(str(device), []):
            services.append(ServiceRecord(
                device=device,
                port=int(entry["port"]),
                transport=str(entry.get("transport", "tcp")),
                product=str(entry["product"]),
                version=str(entry.get("version", "")),
            ))
        return services


class TcpConnectBackend:
    """Reports an open (bannerless) service for each port that accepts a
    TCP connection within the timeout; timeouts mean closed, not failure."""

    def __init__(self, ports, timeout=0.5):
        if not ports:
            raise BackendUnavailable("tcp-connect backend needs a port list")
        self._ports = list(ports)
        self._timeout = timeout

    def scan(self, device):
        if device.kind != "ipv4":
            raise BackendUnavailable("tcp-connect backend scans ipv4 devices only")
        services = []
        for port in self._ports:
            try:
                with socket.create_connection((device.value, port), timeout=self._timeout):
                    services.append(ServiceRecord(device, port, "tcp", product="", version=""))
            except OSError:
                continue  # closed, filtered, or timed out
        return services


def scan_device(device, backend):
    """Enumerate a device's services through the configured backend."""
    return backend.scan(device)


def match_vulnerabilities(services, cves, device=None, substring=False,
                          generated_at=None):
    """Join services against the feed.

    A pair matches when the product names are equal (case-insensitive;
    containment in substring mode) and the service version falls inside
    the record's inclusive range. Services without a version never match.
    """
    if device is None:
        owners = {s.device for s in services}
        if len(owners) == 1:
            device = owners.pop()
    matches = []
    for service in services:
        if not service.version or not service.product:
            continue
        svc_key = version_key(service.version)
        for cve in cves:
            if substring:
                name_ok = cve.product in service.product or service.product in cve.product
            else:
                name_ok = service.product == cve.product
            if not name_ok:
                continue
            if version_key(cve.version_min) <= svc_key <= version_key(cve.version_max):
                matches.append((service, cve))
    when = time.time() if generated_at is None else generated_at
    return VulnReport(device, matches, when)
