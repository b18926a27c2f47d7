"""Canonical byte encoding.

Integers are 8-byte big-endian. Byte strings and lists carry a 4-byte
big-endian length prefix. Fields are written in declaration order.
"""

from __future__ import annotations

import struct


class DecodeError(ValueError):
    pass


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u64(self, value: int) -> "Writer":
        if not 0 <= value < 1 << 64:
            raise ValueError(f"integer out of u64 range: {value}")
        self._parts.append(value.to_bytes(8, "big"))
        return self

    def blob(self, value: bytes) -> "Writer":
        self._parts.append(struct.pack(">I", len(value)))
        self._parts.append(bytes(value))
        return self

    def count(self, n: int) -> "Writer":
        self._parts.append(struct.pack(">I", n))
        return self

    def raw(self, value: bytes) -> "Writer":
        self._parts.append(bytes(value))
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = bytes(data)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise DecodeError("truncated input")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u64(self) -> int:
        return int.from_bytes(self._take(8), "big")

    def u8(self) -> int:
        return self._take(1)[0]

    def count(self) -> int:
        (n,) = struct.unpack(">I", self._take(4))
        return n

    def blob(self) -> bytes:
        return self._take(self.count())

    def done(self) -> None:
        if self._pos != len(self._data):
            raise DecodeError(f"{len(self._data) - self._pos} trailing bytes")
