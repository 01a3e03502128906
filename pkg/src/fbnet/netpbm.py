"""Binary PPM (P6) and PGM (P5) reading and writing.

Both formats: magic, whitespace-separated width/height/maxval with
'#' comments allowed, one whitespace byte, then raw samples. Only
maxval 255 is supported. Parse errors carry the byte offset at which
the problem was found.
"""

from __future__ import annotations

import numpy as np


class NetpbmError(Exception):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _quantize(values):
    arr = np.asarray(values)
    if arr.dtype == np.uint8:
        return arr
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image):
    """image: (3, H, W) uint8, or floats in [0, 1] quantized to 8 bits."""
    arr = _quantize(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"PPM image must be (3, H, W), got {arr.shape}")
    _, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr.transpose(1, 2, 0)).tobytes())


def write_pgm(path, mask):
    """mask: (H, W) uint8 (the ignore id 255 round-trips unchanged)."""
    arr = _quantize(mask)
    if arr.ndim != 2:
        raise ValueError(f"PGM image must be (H, W), got {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


class _Parser:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def fail(self, message):
        raise NetpbmError(message, self.pos)

    def _skip_space_and_comments(self):
        while self.pos < len(self.buf):
            ch = self.buf[self.pos : self.pos + 1]
            if ch.isspace():
                self.pos += 1
            elif ch == b"#":
                while self.pos < len(self.buf) and self.buf[self.pos : self.pos + 1] not in (b"\n", b""):
                    self.pos += 1
            else:
                return

    def token(self, what):
        self._skip_space_and_comments()
        start = self.pos
        while self.pos < len(self.buf) and not self.buf[self.pos : self.pos + 1].isspace():
            self.pos += 1
        if self.pos == start:
            self.fail(f"missing {what}")
        return self.buf[start : self.pos]

    def integer(self, what):
        tok = self.token(what)
        try:
            value = int(tok)
        except ValueError:
            self.fail(f"{what} is not an integer: {tok!r}")
        if value <= 0:
            self.fail(f"{what} must be positive, got {value}")
        return value

    def raster(self, count):
        # exactly one whitespace byte separates maxval from the raster
        if self.pos >= len(self.buf) or not self.buf[self.pos : self.pos + 1].isspace():
            self.fail("expected single whitespace before raster data")
        self.pos += 1
        data = self.buf[self.pos : self.pos + count]
        if len(data) < count:
            self.pos = len(self.buf)
            self.fail(f"truncated raster: wanted {count} bytes, file ends early")
        self.pos += count
        return np.frombuffer(data, dtype=np.uint8, count=count)


def _read(path, magic, channels):
    with open(path, "rb") as fh:
        parser = _Parser(fh.read())
    got = parser.token("magic")
    if got != magic:
        parser.pos = 0
        parser.fail(f"bad magic {got!r}, expected {magic!r}")
    w = parser.integer("width")
    h = parser.integer("height")
    maxval = parser.integer("maxval")
    if maxval != 255:
        parser.fail(f"unsupported maxval {maxval}; only 255")
    return parser.raster(h * w * channels), h, w


def read_ppm(path):
    """-> (3, H, W) uint8"""
    flat, h, w = _read(path, b"P6", 3)
    return flat.reshape(h, w, 3).transpose(2, 0, 1).copy()


def read_pgm(path):
    """-> (H, W) uint8"""
    flat, h, w = _read(path, b"P5", 1)
    return flat.reshape(h, w).copy()
