"""RGB frames and the portable pixmap (PPM) file format."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

MIN_SIDE = 32


class FrameFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Frame:
    """Row-major RGB raster, ``pixels`` has shape (height, width, 3) and dtype uint8."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError(f"expected (H, W, 3) uint8 pixels, got {px.shape} {px.dtype}")
        if px.shape[0] < MIN_SIDE or px.shape[1] < MIN_SIDE:
            raise ValueError(f"frame must be at least {MIN_SIDE}x{MIN_SIDE}, got {px.shape[1]}x{px.shape[0]}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_ppm(self, binary: bool = True) -> bytes:
        header = f"P{6 if binary else 3}\n{self.width} {self.height}\n255\n".encode("ascii")
        if binary:
            return header + np.ascontiguousarray(self.pixels).tobytes()
        rows = (" ".join(map(str, row)) for row in self.pixels.reshape(self.height, -1).tolist())
        return header + ("\n".join(rows) + "\n").encode("ascii")

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _tokens(data: bytes, count: int, pos: int = 0) -> tuple[list[int], int]:
    out = []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FrameFormatError(f"unexpected end of header at byte {pos}")
        try:
            out.append(int(m.group(1)))
        except ValueError:
            raise FrameFormatError(f"bad header token {m.group(1)!r} at byte {m.start(1)}") from None
        pos = m.end()
    return out, pos


def frame_from_ppm(data: bytes) -> Frame:
    """Parse a P3 (ASCII) or P6 (binary) pixmap with maxval 255."""
    magic = data[:2]
    if magic not in (b"P3", b"P6"):
        raise FrameFormatError(f"not a P3/P6 pixmap (magic {magic!r})")
    (width, height, maxval), pos = _tokens(data, 3, 2)
    if maxval != 255:
        raise FrameFormatError(f"only maxval 255 is supported, got {maxval}")
    n = width * height * 3
    if magic == b"P6":
        body = data[pos + 1 : pos + 1 + n]
        if len(body) != n:
            raise FrameFormatError(f"expected {n} pixel bytes, found {len(body)}")
        values = np.frombuffer(body, dtype=np.uint8)
    else:
        values = np.array(data[pos:].split()[:n], dtype=np.int64)
        if values.size != n:
            raise FrameFormatError(f"expected {n} samples, found {values.size}")
        if values.min(initial=0) < 0 or values.max(initial=0) > 255:
            raise FrameFormatError("sample outside 0..255")
        values = values.astype(np.uint8)
    return Frame(values.reshape(height, width, 3).copy())
