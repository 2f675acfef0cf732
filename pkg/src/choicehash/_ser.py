"""Shared helpers for the binary structure-file formats.

All integers are little-endian.  Bit tables pack r-bit entries
consecutively: stream bit p is bit (p mod r) of entry p // r, and bit t
of byte b is stream bit 8*b + t.
"""

from __future__ import annotations

import struct

import numpy as np


def pack_table(z: np.ndarray, r: int) -> bytes:
    """Pack an array of r-bit entries (as uint64) into bytes."""
    m = z.size
    bits = np.zeros(m * r, dtype=np.uint8)
    for b in range(r):
        bits[b::r] = (z >> np.uint64(b)) & np.uint64(1)
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_table(data: bytes, m: int, r: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if bits.size < m * r:
        raise ValueError("truncated bit table")
    z = np.zeros(m, dtype=np.uint64)
    for b in range(r):
        z |= bits[b:m * r:r].astype(np.uint64) << np.uint64(b)
    return z


def table_nbytes(m: int, r: int) -> int:
    return (m * r + 7) // 8


class Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def magic(self, expected: bytes) -> None:
        got = self.take(len(expected))
        if got != expected:
            raise ValueError(f"bad magic {got!r}, expected {expected!r}")

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated structure file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def u8(x: int) -> bytes:
    return struct.pack("<B", x)


def u32(x: int) -> bytes:
    return struct.pack("<I", x)


def u64(x: int) -> bytes:
    return struct.pack("<Q", x)
