"""
Little-endian binary reading with byte-offset tracking.
Every decoding failure becomes a ParseError pointing at the offending offset.
"""

import struct

import numpy as np

from blockout.exceptions import ParseError


class ByteReader:
    """Sequential reader over an in-memory buffer."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def remaining(self) -> int:
        return len(self.data) - self.offset

    def _take(self, size: int, what: str) -> bytes:
        if size < 0 or self.remaining() < size:
            raise ParseError(f"truncated while reading {what}: need {size} bytes, {self.remaining()} left", self.offset)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def expect(self, magic: bytes, what: str = "magic") -> None:
        start = self.offset
        found = self._take(len(magic), what)
        if found != magic:
            raise ParseError(f"bad {what}: expected {magic!r}, found {found!r}", start)

    def unpack(self, fmt: str, what: str):
        """Read one struct value; fmt excludes the byte-order prefix."""
        (value,) = struct.unpack("<" + fmt, self._take(struct.calcsize("<" + fmt), what))
        return value

    def float64s(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self._take(8 * count, what), dtype="<f8").astype(np.float64)

    def records(self, dtype: np.dtype, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self._take(dtype.itemsize * count, what), dtype=dtype, count=count)

    def expect_end(self) -> None:
        if self.remaining():
            raise ParseError(f"{self.remaining()} unexpected trailing bytes", self.offset)


def pack(fmt: str, *values) -> bytes:
    return struct.pack("<" + fmt, *values)


def float64_bytes(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()
