"""Fixed blue-to-red colormap for feature heatmaps.

The 256-entry table is generated by integer interpolation between five
anchors (blue, cyan, green, yellow, red), so rendered files are
byte-reproducible across platforms.
"""

from __future__ import annotations

import numpy as np

from fbnet.netpbm import write_ppm

_ANCHORS = (
    (0, (0, 0, 255)),
    (64, (0, 255, 255)),
    (128, (0, 255, 0)),
    (192, (255, 255, 0)),
    (255, (255, 0, 0)),
)


def lut():
    """(256, 3) uint8 lookup table, index 0 = blue, 255 = red."""
    table = np.zeros((256, 3), dtype=np.uint8)
    for (i0, c0), (i1, c1) in zip(_ANCHORS, _ANCHORS[1:]):
        span = i1 - i0
        for i in range(i0, i1 + 1):
            t = i - i0
            for ch in range(3):
                table[i, ch] = (c0[ch] * (span - t) + c1[ch] * t + span // 2) // span
    return table


def colorize(values):
    """Min-max normalize a 2-d array onto the LUT; constant input maps to blue."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {arr.shape}")
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        idx = np.clip(np.rint((arr - lo) / (hi - lo) * 255.0), 0, 255).astype(np.int64)
    else:
        idx = np.zeros(arr.shape, dtype=np.int64)
    return lut()[idx].transpose(2, 0, 1).copy()


def heatmap_ppm(path, values):
    """Render a 2-d array as a colormapped PPM file."""
    write_ppm(path, colorize(values))
