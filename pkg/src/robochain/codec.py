"""Canonical binary serialization.

Every field is written in declaration order. Integers and floats are
big-endian, byte strings and text are prefixed with a u32 length. The
tagged value encoding covers contract parameters, storage snapshots and
operation lists so that they hash the same way ledger payloads do.
"""

from __future__ import annotations

import hashlib
import math
import struct
from typing import Any

DIGEST_SIZE = 32
ZERO_HASH = bytes(DIGEST_SIZE)


class DecodeError(ValueError):
    """Raised when bytes do not parse; ``offset`` is absolute in the source buffer."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def u8(n: int) -> bytes:
    return struct.pack(">B", n)


def u32(n: int) -> bytes:
    return struct.pack(">I", n)


def u64(n: int) -> bytes:
    return struct.pack(">Q", n)


def i64(n: int) -> bytes:
    return struct.pack(">q", n)


def f64(x: float) -> bytes:
    if math.isnan(x):
        raise ValueError("NaN has no canonical encoding")
    return struct.pack(">d", x + 0.0)  # folds -0.0 into 0.0


def blob(data: bytes) -> bytes:
    return u32(len(data)) + data


def text(s: str) -> bytes:
    return blob(s.encode("utf-8"))


class Reader:
    """Sequential reader over a buffer, with offsets reported relative to ``base``."""

    def __init__(self, data: bytes, base: int = 0):
        self.data = memoryview(data)
        self.pos = 0
        self.base = base

    @property
    def offset(self) -> int:
        return self.base + self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(f"need {n} bytes, {len(self.data) - self.pos} left", self.offset)
        out = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self.take(8))[0]

    def f64(self) -> float:
        at = self.offset
        (x,) = struct.unpack(">d", self.take(8))
        if math.isnan(x):
            raise DecodeError("NaN float", at)
        return x

    def blob(self) -> bytes:
        return self.take(self.u32())

    def text(self) -> str:
        at = self.offset
        raw = self.blob()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid UTF-8 ({exc.reason})", at) from None

    def done(self) -> bool:
        return self.pos == len(self.data)

    def expect_end(self) -> None:
        if not self.done():
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes", self.offset)


# Tagged values. Mappings are written with keys sorted so that two equal
# dicts always produce the same bytes.
_NONE, _FALSE, _TRUE, _INT, _FLOAT, _STR, _BYTES, _LIST, _MAP = b"NFTifsblm"


def encode_value(value: Any) -> bytes:
    if value is None:
        return bytes([_NONE])
    if value is True:
        return bytes([_TRUE])
    if value is False:
        return bytes([_FALSE])
    if isinstance(value, int):
        return bytes([_INT]) + i64(value)
    if isinstance(value, float):
        return bytes([_FLOAT]) + f64(value)
    if isinstance(value, str):
        return bytes([_STR]) + text(value)
    if isinstance(value, (bytes, bytearray)):
        return bytes([_BYTES]) + blob(bytes(value))
    if isinstance(value, (list, tuple)):
        return bytes([_LIST]) + u32(len(value)) + b"".join(encode_value(v) for v in value)
    if isinstance(value, dict):
        keys = sorted(value)
        if not all(isinstance(k, str) for k in keys):
            raise TypeError("mapping keys must be strings")
        parts = [text(k) + encode_value(value[k]) for k in keys]
        return bytes([_MAP]) + u32(len(keys)) + b"".join(parts)
    raise TypeError(f"no canonical encoding for {type(value).__name__}")


def _read_value(r: Reader) -> Any:
    at = r.offset
    tag = r.u8()
    if tag == _NONE:
        return None
    if tag == _TRUE:
        return True
    if tag == _FALSE:
        return False
    if tag == _INT:
        return r.i64()
    if tag == _FLOAT:
        return r.f64()
    if tag == _STR:
        return r.text()
    if tag == _BYTES:
        return r.blob()
    if tag == _LIST:
        return [_read_value(r) for _ in range(r.u32())]
    if tag == _MAP:
        out: dict[str, Any] = {}
        prev = None
        for _ in range(r.u32()):
            key_at = r.offset
            key = r.text()
            if prev is not None and key <= prev:
                raise DecodeError("mapping keys out of order", key_at)
            out[key] = _read_value(r)
            prev = key
        return out
    raise DecodeError(f"unknown value tag {tag:#x}", at)


def decode_value(data: bytes, base: int = 0) -> Any:
    r = Reader(data, base)
    value = _read_value(r)
    r.expect_end()
    return value
