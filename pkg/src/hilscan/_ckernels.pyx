# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled kernels for the per-chunk hot paths.

Byte-for-byte equivalent to hilscan.kernels.pure; see that module for the
contracts. Selection between the two happens in hilscan.kernels.
"""

from cpython cimport array
import array

cdef unsigned char CLASS_OF[256]

cdef _init_class_table():
    cdef int b
    CLASS_OF[0x00] = 0                 # null
    for b in range(0x01, 0x20):
        CLASS_OF[b] = 2                # control
    for b in range(0x20, 0x7F):
        CLASS_OF[b] = 1                # printable
    CLASS_OF[0x7F] = 2                 # DEL is control
    for b in range(0x80, 0xFF):
        CLASS_OF[b] = 3                # extended
    CLASS_OF[0xFF] = 4                 # non-breaking space

_init_class_table()


def classify_bytes(const unsigned char[::1] data):
    cdef Py_ssize_t i, n = data.shape[0]
    out = bytearray(n)
    cdef unsigned char[::1] view = out
    for i in range(n):
        view[i] = CLASS_OF[data[i]]
    return bytes(out)


def render_classes(const unsigned char[::1] data, const int[::1] flat_map, int side):
    cdef Py_ssize_t d, n = side * side
    if data.shape[0] != n or flat_map.shape[0] != n:
        raise ValueError("data and flat_map must both have side*side entries")
    grid = bytearray(n)
    cdef unsigned char[::1] view = grid
    for d in range(n):
        view[flat_map[d]] = CLASS_OF[data[d]]
    return bytes(grid)


def tile_class_counts(const unsigned char[::1] grid, int side, int tile):
    cdef Py_ssize_t x, y, t
    cdef int tiles_per_side
    if side % tile != 0:
        raise ValueError("tile must divide side")
    if grid.shape[0] != side * side:
        raise ValueError("grid length must be side*side")
    tiles_per_side = side // tile
    cdef array.array counts = array.array(
        "i", bytes(4 * tiles_per_side * tiles_per_side * 5))
    cdef int[::1] view = counts
    for y in range(side):
        for x in range(side):
            t = ((y // tile) * tiles_per_side + x // tile) * 5
            view[t + grid[y * side + x]] += 1
    return counts
