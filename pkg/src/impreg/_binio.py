"""Little-endian binary framing shared by the on-disk file formats."""

import struct
import zlib

import numpy as np

from .errors import ChecksumMismatch, FormatVersionMismatch


class CrcWriter:
    """Wraps a binary file handle and accumulates a CRC32 over written bytes."""

    def __init__(self, fh):
        self._fh = fh
        self.crc = 0

    def write(self, data: bytes):
        self._fh.write(data)
        self.crc = zlib.crc32(data, self.crc)

    def pack(self, fmt: str, *values):
        self.write(struct.pack("<" + fmt, *values))

    def write_array(self, arr):
        self.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def write_crc(self):
        # The checksum itself is excluded from the running CRC.
        self._fh.write(struct.pack("<I", self.crc & 0xFFFFFFFF))


class CrcReader:
    """Reads exact byte counts, tracking a CRC32; short reads mean truncation."""

    def __init__(self, fh):
        self._fh = fh
        self.crc = 0

    def read(self, size: int) -> bytes:
        data = self._fh.read(size)
        if len(data) != size:
            raise ChecksumMismatch("file truncated")
        self.crc = zlib.crc32(data, self.crc)
        return data

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.read(size))

    def read_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.read(8 * count), dtype="<f8").astype(float)

    def expect_magic(self, magic: bytes, version: int):
        got = self.read(len(magic))
        if got != magic:
            raise FormatVersionMismatch(
                "bad magic %r, expected %r" % (got, magic))
        (ver,) = self.unpack("B")
        if ver != version:
            raise FormatVersionMismatch(
                "format version %d, this code reads %d" % (ver, version))

    def check_crc(self):
        tail = self._fh.read(4)
        if len(tail) != 4:
            raise ChecksumMismatch("file truncated before checksum")
        (stored,) = struct.unpack("<I", tail)
        if stored != (self.crc & 0xFFFFFFFF):
            raise ChecksumMismatch("checksum does not match payload")
        if self._fh.read(1):
            raise ChecksumMismatch("trailing bytes after checksum")
