"""Binary visualization: payload bytes to Hilbert-curve class images.

Every byte falls in exactly one of five classes, each with a fixed color:

    null (0x00)             black   (0, 0, 0)
    printable (0x20..0x7E)  blue    (0, 0, 255)
    control (0x01..0x1F, 0x7F)  green (0, 255, 0)
    extended (0x80..0xFE)   red     (255, 0, 0)
    non-breaking (0xFF)     white   (255, 255, 255)

A chunk of side*side bytes is laid onto the grid along the Hilbert curve
so that bytes close in the stream land close in the image. Curve
orientation is fixed: the order-1 cell sequence is (0,0), (0,1), (1,1),
(1,0), and higher orders follow the standard quadrant-rotation recursion.
Coordinates are (x, y) = (column, row); images serialize row-major.
"""

from __future__ import annotations

import struct
import zlib
from array import array
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from pathlib import Path

from hilscan import kernels
from hilscan.errors import BadChunkSize, IndexOutOfRange, IoFailure

DEFAULT_CHUNK_SIZE = 4096  # 64x64 image


class ByteClass(IntEnum):
    NULL = 0
    PRINTABLE = 1
    CONTROL = 2
    EXTENDED = 3
    NONBREAKING = 4


# RGB triple per class id, indexable by ByteClass.
COLOR_MAP = (
    (0, 0, 0),
    (0, 0, 255),
    (0, 255, 0),
    (255, 0, 0),
    (255, 255, 255),
)

_RGB_BY_CLASS = b"".join(bytes(c) for c in COLOR_MAP)


def classify_byte(b):
    """Class of a single byte value 0..255."""
    if not 0 <= b <= 255:
        raise ValueError(f"byte value out of range: {b}")
    return ByteClass(kernels.classify_bytes(bytes([b]))[0])


def _rot(s, x, y, rx, ry):
    if ry == 0:
        if rx == 1:
            x = s - 1 - x
            y = s - 1 - y
        x, y = y, x
    return x, y


def d2xy(order, d):
    """Cell (x, y) of curve position d on the 2**order grid."""
    if order < 1:
        raise IndexOutOfRange(f"order must be >= 1, got {order}")
    side = 1 << order
    if not 0 <= d < side * side:
        raise IndexOutOfRange(f"d={d} outside [0, {side * side})")
    x = y = 0
    t = d
    s = 1
    while s < side:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        x, y = _rot(s, x, y, rx, ry)
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


@lru_cache(maxsize=None)
def hilbert_flat_map(order, curve="hilbert"):
    """Flat row-major index (y*side + x) of every curve position.

    `curve` is an extension point; only "hilbert" is implemented.
    """
    if curve != "hilbert":
        raise ValueError(f"unsupported curve {curve!r}")
    side = 1 << order
    flat = array("i", bytes(4 * side * side))
    for d in range(side * side):
        x, y = d2xy(order, d)
        flat[d] = y * side + x
    return flat


def _order_for_chunk_size(chunk_size):
    # power of 4 so the image side is a power of 2
    if chunk_size < 4:
        raise BadChunkSize(f"chunk size must be a power of 4, got {chunk_size}")
    n, order = chunk_size, 0
    while n > 1:
        if n % 4 != 0:
            raise BadChunkSize(f"chunk size must be a power of 4, got {chunk_size}")
        n //= 4
        order += 1
    return order


@dataclass
class Chunk:
    data: bytes          # exactly chunk_size bytes, zero-padded at the tail
    pad_len: int
    origin: tuple[str, int]  # (capture id, byte offset into the stream)


@dataclass
class HilbertImage:
    side: int
    classes: bytes  # side*side class ids, row-major

    def class_at(self, x, y):
        return ByteClass(self.classes[y * self.side + x])

    def to_rgb(self):
        """Row-major RGB triples under the fixed color map."""
        out = bytearray(len(self.classes) * 3)
        for i, c in enumerate(self.classes):
            out[3 * i:3 * i + 3] = _RGB_BY_CLASS[3 * c:3 * c + 3]
        return bytes(out)


def chunk_stream(payload, chunk_size=DEFAULT_CHUNK_SIZE, capture_id=""):
    """Split a byte stream into fixed-size chunks, zero-padding the tail.

    An empty payload yields no chunks; an all-pad chunk is never emitted.
    """
    _order_for_chunk_size(chunk_size)
    chunks = []
    for offset in range(0, len(payload), chunk_size):
        piece = payload[offset:offset + chunk_size]
        pad = chunk_size - len(piece)
        if pad:
            piece = piece + b"\x00" * pad
        chunks.append(Chunk(bytes(piece), pad, (capture_id, offset)))
    return chunks


def render_chunk(chunk):
    """Render one chunk: pixel at d2xy(order, d) is the class of byte d."""
    order = _order_for_chunk_size(len(chunk.data))
    side = 1 << order
    flat = hilbert_flat_map(order)
    return HilbertImage(side, kernels.render_classes(chunk.data, flat, side))


def ppm_bytes(image):
    """Exact binary P6 encoding of the image."""
    header = f"P6\n{image.side} {image.side}\n255\n".encode("ascii")
    return header + image.to_rgb()


def _png_chunk(tag, payload):
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload)))


def png_bytes(image):
    """Minimal conformant PNG: 8-bit RGB, no interlace, filter 0 rows."""
    side = image.side
    rgb = image.to_rgb()
    raw = b"".join(b"\x00" + rgb[y * side * 3:(y + 1) * side * 3] for y in range(side))
    ihdr = struct.pack(">IIBBBBB", side, side, 8, 2, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n"
            + _png_chunk(b"IHDR", ihdr)
            + _png_chunk(b"IDAT", zlib.compress(raw, 9))
            + _png_chunk(b"IEND", b""))


def write_image(image, format="ppm", destination=None):
    """Write the image as ppm or png; returns bytes written.

    destination may be a path or a binary file-like object.
    """
    if format == "ppm":
        blob = ppm_bytes(image)
    elif format == "png":
        blob = png_bytes(image)
    else:
        raise ValueError(f"unsupported image format {format!r}")
    try:
        if hasattr(destination, "write"):
            destination.write(blob)
        else:
            Path(destination).write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write image to {destination}: {exc}") from exc
    return len(blob)


def capture_byte_stream(capture, payload_only=False):
    """Concatenated packet bytes of a capture, in file order.

    Default is the full stored frame bytes. With payload_only, only the
    transport payload of Ethernet/IPv4 TCP and UDP packets contributes;
    other frames add nothing.
    """
    if not payload_only:
        return b"".join(pkt.data for pkt in capture.packets)
    parts = []
    for pkt in capture.packets:
        data = pkt.data
        if len(data) < 34 or data[12:14] != b"\x08\x00" or data[14] >> 4 != 4:
            continue
        ihl = (data[14] & 0x0F) * 4
        proto = data[23]
        transport = 14 + ihl
        if proto == 6:  # TCP: data offset in the 12th transport byte
            if len(data) < transport + 13:
                continue
            payload_at = transport + ((data[transport + 12] >> 4) * 4)
        elif proto == 17:  # UDP
            payload_at = transport + 8
        else:
            continue
        if payload_at < len(data):
            parts.append(data[payload_at:])
    return b"".join(parts)
