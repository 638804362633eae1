"""Kernel backend selection.

The compiled extension (hilscan._ckernels) is preferred when it built;
otherwise the pure-Python fallback is used. Set HILSCAN_KERNELS=pure or
HILSCAN_KERNELS=compiled to force a backend (compiled raises if the
extension is unavailable). benchmarks/kernel_bench.py compares the two.
"""

import os

_forced = os.environ.get("HILSCAN_KERNELS", "").strip().lower()

if _forced not in ("", "pure", "compiled"):
    raise RuntimeError(f"HILSCAN_KERNELS must be 'pure' or 'compiled', got {_forced!r}")

if _forced == "pure":
    from hilscan.kernels.pure import classify_bytes, render_classes, tile_class_counts
    BACKEND = "pure"
else:
    try:
        from hilscan._ckernels import classify_bytes, render_classes, tile_class_counts
        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        from hilscan.kernels.pure import classify_bytes, render_classes, tile_class_counts
        BACKEND = "pure"

__all__ = ["classify_bytes", "render_classes", "tile_class_counts", "BACKEND"]
