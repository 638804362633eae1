"""Pure-Python kernels; drop-in fallback for the compiled extension.

The three functions here are the per-chunk hot paths of the pipeline.
They must stay byte-for-byte equivalent to hilscan._ckernels; the test
suite asserts that on random inputs.
"""

from array import array

# Byte class ids, in render/feature order.
NULL, PRINTABLE, CONTROL, EXTENDED, NONBREAKING = range(5)


def _build_class_table():
    table = bytearray(256)
    table[0x00] = NULL
    for b in range(0x01, 0x20):
        table[b] = CONTROL
    for b in range(0x20, 0x7F):
        table[b] = PRINTABLE
    table[0x7F] = CONTROL
    for b in range(0x80, 0xFF):
        table[b] = EXTENDED
    table[0xFF] = NONBREAKING
    return bytes(table)


CLASS_TABLE = _build_class_table()


def classify_bytes(data):
    """Map each byte to its class id (one output byte per input byte)."""
    return bytes(data).translate(CLASS_TABLE)


def render_classes(data, flat_map, side):
    """Scatter per-byte classes onto a side*side grid.

    flat_map[d] is the row-major flat index (y * side + x) of curve
    position d. Returns the flattened row-major grid of class ids.
    """
    n = side * side
    if len(data) != n or len(flat_map) != n:
        raise ValueError("data and flat_map must both have side*side entries")
    classes = bytes(data).translate(CLASS_TABLE)
    grid = bytearray(n)
    for d in range(n):
        grid[flat_map[d]] = classes[d]
    return bytes(grid)


def tile_class_counts(grid, side, tile):
    """Per-tile class histogram over a row-major class grid.

    Tiles are tile*tile pixel squares enumerated row-major; output is an
    int array of length (side//tile)**2 * 5 laid out tile-major, the five
    class counts of tile 0 first.
    """
    if side % tile != 0:
        raise ValueError("tile must divide side")
    if len(grid) != side * side:
        raise ValueError("grid length must be side*side")
    tiles_per_side = side // tile
    counts = array("i", bytes(4 * tiles_per_side * tiles_per_side * 5))
    for y in range(side):
        row_tile = (y // tile) * tiles_per_side
        base = y * side
        for x in range(side):
            t = row_tile + x // tile
            counts[t * 5 + grid[base + x]] += 1
    return counts
