"""Little-endian marshalling helpers shared by every wire and disk format."""

import struct

_U64 = struct.Struct("<Q")
_U8 = struct.Struct("<B")

U64_MAX = (1 << 64) - 1


class DecodeError(ValueError):
    pass


class Writer:
    __slots__ = ("_parts",)

    def __init__(self):
        self._parts = []

    def u8(self, v: int) -> "Writer":
        self._parts.append(_U8.pack(v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(_U64.pack(v))
        return self

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(bytes(b))
        return self

    def blob(self, b: bytes) -> "Writer":
        """Length-prefixed byte string."""
        self._parts.append(_U64.pack(len(b)))
        self._parts.append(bytes(b))
        return self

    def u64_list(self, vals) -> "Writer":
        vals = list(vals)
        self.u64(len(vals))
        for v in vals:
            self.u64(v)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    __slots__ = ("_buf", "_pos")

    def __init__(self, data: bytes):
        self._buf = bytes(data)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if n < 0 or end > len(self._buf):
            raise DecodeError(f"need {n} bytes at offset {self._pos}, have {len(self._buf) - self._pos}")
        out = self._buf[self._pos:end]
        self._pos = end
        return out

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u64())

    def u64_list(self) -> list:
        n = self.u64()
        if n * 8 > self.remaining:
            raise DecodeError("list length exceeds buffer")
        return [self.u64() for _ in range(n)]

    def rest(self) -> bytes:
        return self._take(self.remaining)

    @property
    def remaining(self) -> int:
        return len(self._buf) - self._pos

    def done(self) -> bool:
        return self._pos == len(self._buf)

    def expect_done(self):
        if not self.done():
            raise DecodeError(f"{self.remaining} trailing bytes")


def u64(v: int) -> bytes:
    return _U64.pack(v)


def read_u64(b: bytes, off: int = 0) -> int:
    if off + 8 > len(b):
        raise DecodeError("short u64")
    return _U64.unpack_from(b, off)[0]
