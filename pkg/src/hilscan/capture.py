"""Classic libpcap capture parsing and per-device traffic attribution.

The parser handles both byte orders of the classic format: a 24-byte
global header (magic, version, thiszone, sigfigs, snaplen, network)
followed by 16-byte record headers (ts_sec, ts_usec, incl_len, orig_len).
Nanosecond-resolution captures are rejected as BadMagic; pcapng is out of
scope. A writer is provided so fixtures and round-trip checks stay inside
the toolkit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from hilscan.errors import BadMagic, CorruptRecord, TruncatedHeader, UnsupportedLinkType

MAGIC_MICROS = 0xA1B2C3D4
MAGIC_NANOS = 0xA1B23C4D  # recognised only to reject it explicitly

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800


@dataclass(frozen=True)
class DeviceKey:
    """Canonical device identity: a lowercase mac or dotted-quad ipv4."""

    kind: str  # "mac" | "ipv4"
    value: str

    def __post_init__(self):
        if self.kind not in ("mac", "ipv4"):
            raise ValueError(f"unknown device kind {self.kind!r}")

    def __str__(self):
        return f"{self.kind}:{self.value}"

    @classmethod
    def ipv4(cls, address):
        octets = address.split(".")
        if len(octets) != 4 or any(not o.isdigit() or not 0 <= int(o) <= 255 for o in octets):
            raise ValueError(f"not a dotted-quad ipv4 address: {address!r}")
        return cls("ipv4", ".".join(str(int(o)) for o in octets))

    @classmethod
    def mac(cls, address):
        parts = address.lower().split(":")
        if len(parts) != 6 or any(len(p) != 2 or not all(c in "0123456789abcdef" for c in p)
                                  for p in parts):
            raise ValueError(f"not a colon-separated mac address: {address!r}")
        return cls("mac", ":".join(parts))

    @classmethod
    def parse(cls, text):
        """Parse 'ipv4:10.0.0.1', 'mac:aa:bb:..', or a bare ipv4 address."""
        if text.startswith("ipv4:"):
            return cls.ipv4(text[5:])
        if text.startswith("mac:"):
            return cls.mac(text[4:])
        return cls.ipv4(text)


@dataclass
class RawPacket:
    ts_seconds: int
    ts_micros: int
    captured_len: int
    original_len: int
    data: bytes

    @property
    def timestamp(self):
        """Packet time as float epoch seconds."""
        return self.ts_seconds + self.ts_micros / 1_000_000


@dataclass
class CaptureFile:
    endianness: str = "little"  # byte order the file was (or will be) stored in
    link_type: int = LINKTYPE_ETHERNET
    snap_len: int = 65535
    packets: list[RawPacket] = field(default_factory=list)
    # header fields preserved for byte-exact re-serialization
    version_major: int = 2
    version_minor: int = 4
    thiszone: int = 0
    sigfigs: int = 0
    # parse diagnostics
    truncated_records: int = 0   # trailing records dropped for missing bytes
    normalized_records: int = 0  # records whose length/usec fields were repaired
    timestamp_inversions: int = 0  # adjacent packet pairs out of time order


def parse_capture(raw_bytes):
    """Parse classic-pcap bytes into a CaptureFile.

    File order is preserved; out-of-order timestamps are only counted in
    timestamp_inversions. A truncated trailing record is dropped and
    counted, never raised.
    """
    if len(raw_bytes) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"capture is {len(raw_bytes)} bytes, header needs {GLOBAL_HEADER_LEN}")

    (le_magic,) = struct.unpack_from("<I", raw_bytes, 0)
    if le_magic == MAGIC_MICROS:
        endianness = "little"
    elif struct.unpack_from(">I", raw_bytes, 0)[0] == MAGIC_MICROS:
        endianness = "big"
    elif le_magic == MAGIC_NANOS or struct.unpack_from(">I", raw_bytes, 0)[0] == MAGIC_NANOS:
        raise BadMagic("nanosecond-resolution captures are not supported")
    else:
        raise BadMagic(f"unrecognized magic 0x{le_magic:08X}")

    prefix = "<" if endianness == "little" else ">"
    vmaj, vmin, thiszone, sigfigs, snap_len, network = struct.unpack_from(
        prefix + "HHiIII", raw_bytes, 4)

    cap = CaptureFile(
        endianness=endianness,
        link_type=network,
        snap_len=snap_len,
        version_major=vmaj,
        version_minor=vmin,
        thiszone=thiszone,
        sigfigs=sigfigs,
    )

    record = struct.Struct(prefix + "IIII")
    offset = GLOBAL_HEADER_LEN
    total = len(raw_bytes)
    prev_ts = None
    while offset < total:
        if total - offset < RECORD_HEADER_LEN:
            cap.truncated_records += 1
            break
        ts_sec, ts_usec, incl_len, orig_len = record.unpack_from(raw_bytes, offset)
        if incl_len > snap_len:
            raise CorruptRecord(
                f"record at offset {offset} declares {incl_len} stored bytes, snaplen is {snap_len}")
        offset += RECORD_HEADER_LEN
        if total - offset < incl_len:
            cap.truncated_records += 1
            break
        data = raw_bytes[offset:offset + incl_len]
        offset += incl_len

        repaired = False
        if ts_usec >= 1_000_000:
            ts_sec += ts_usec // 1_000_000
            ts_usec %= 1_000_000
            repaired = True
        if orig_len < incl_len:
            orig_len = incl_len
            repaired = True
        if repaired:
            cap.normalized_records += 1

        ts = (ts_sec, ts_usec)
        if prev_ts is not None and ts < prev_ts:
            cap.timestamp_inversions += 1
        prev_ts = ts
        cap.packets.append(RawPacket(ts_sec, ts_usec, incl_len, orig_len, data))

    return cap


def write_capture(capture):
    """Serialize a CaptureFile back to classic-pcap bytes.

    Honors capture.endianness, so parse -> write reproduces well-formed
    input byte-for-byte. Fresh fixtures default to little-endian.
    """
    prefix = "<" if capture.endianness == "little" else ">"
    out = bytearray()
    out += struct.pack(
        prefix + "IHHiIII",
        MAGIC_MICROS,
        capture.version_major,
        capture.version_minor,
        capture.thiszone,
        capture.sigfigs,
        capture.snap_len,
        capture.link_type,
    )
    record = struct.Struct(prefix + "IIII")
    for pkt in capture.packets:
        out += record.pack(pkt.ts_seconds, pkt.ts_micros, pkt.captured_len, pkt.original_len)
        out += pkt.data
    return bytes(out)


@dataclass
class WindowTally:
    device: DeviceKey
    window_start: int
    window_len: int
    tx_bytes: int = 0
    rx_bytes: int = 0
    packet_count: int = 0  # packets this device transmitted


@dataclass
class AttributionResult:
    """Per-device tallies for one window plus the count of frames that
    fell in the window but could not be attributed."""

    tallies: dict[DeviceKey, WindowTally]
    skipped: int = 0

    def __iter__(self):
        return iter(self.tallies.values())

    def __len__(self):
        return len(self.tallies)


def _ethernet_macs(data):
    if len(data) < 14:
        return None
    dst = data[0:6].hex(":")
    src = data[6:12].hex(":")
    return src, dst


def _ipv4_addresses(data):
    # Ethernet II + IPv4: ethertype at 12, IP header from 14.
    if len(data) < 34 or data[12:14] != b"\x08\x00":
        return None
    if data[14] >> 4 != 4:
        return None
    src = ".".join(str(b) for b in data[26:30])
    dst = ".".join(str(b) for b in data[30:34])
    return src, dst


def attribute_window(capture, window_start, window_len, id_mode="ipv4"):
    """Tally wire bytes per device for packets inside [start, start+len).

    tx accrues to the frame's source device and rx to its destination,
    both using original_len so snaplen-truncated captures still reflect
    true throughput. Frames in the window that cannot be decoded for the
    chosen id mode are counted in `skipped`.
    """
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    if id_mode not in ("mac", "ipv4"):
        raise ValueError(f"unknown id_mode {id_mode!r}")
    if capture.link_type != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(
            f"link type {capture.link_type} is not Ethernet; cannot attribute by {id_mode}")

    window_end_us = window_len * 1_000_000
    tallies: dict[DeviceKey, WindowTally] = {}
    skipped = 0

    def tally(device):
        t = tallies.get(device)
        if t is None:
            t = WindowTally(device, window_start, window_len)
            tallies[device] = t
        return t

    for pkt in capture.packets:
        offset_us = (pkt.ts_seconds - window_start) * 1_000_000 + pkt.ts_micros
        if not 0 <= offset_us < window_end_us:
            continue
        if id_mode == "mac":
            pair = _ethernet_macs(pkt.data)
            make = DeviceKey.mac
        else:
            pair = _ipv4_addresses(pkt.data)
            make = DeviceKey.ipv4
        if pair is None:
            skipped += 1
            continue
        src, dst = make(pair[0]), make(pair[1])
        src_tally = tally(src)
        src_tally.tx_bytes += pkt.original_len
        src_tally.packet_count += 1
        tally(dst).rx_bytes += pkt.original_len

    return AttributionResult(tallies, skipped)
