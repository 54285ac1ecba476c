"""CRC32-trailed binary framing shared by bag files and checkpoints."""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CRCMismatchError, TruncatedFileError, VersionMismatchError

F32 = np.dtype("<f4")


def seal(payload: bytes) -> bytes:
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def unseal(blob: bytes, magic: bytes, version: int, what: str,
           expected_len=None) -> memoryview:
    """Validate magic, version, declared length and CRC.

    ``expected_len`` maps the payload (after the version field) to the total
    file size the header declares; a shorter file is reported as truncated
    rather than as a CRC failure. Returns the payload without the CRC.
    """
    head = len(magic) + 2
    if len(blob) < head + 4:
        raise TruncatedFileError(f"{what}: {len(blob)} bytes is too short")
    if blob[:len(magic)] != magic:
        raise BadMagicError(f"{what}: bad magic {bytes(blob[:len(magic)])!r}, expected {magic!r}")
    (found,) = struct.unpack_from("<H", blob, len(magic))
    if found != version:
        raise VersionMismatchError(f"{what}: version {found}, expected {version}")
    if expected_len is not None:
        want = expected_len(memoryview(blob)[head:])
        if want is not None and len(blob) < want:
            raise TruncatedFileError(f"{what}: {len(blob)} bytes, header declares {want}")
    (stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    actual = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise CRCMismatchError(f"{what}: CRC mismatch (stored {stored:08x}, computed {actual:08x})")
    return memoryview(blob)[head:-4]


class Reader:
    """Sequential little-endian reader that raises on truncation."""

    def __init__(self, buf: memoryview, what: str):
        self.buf, self.pos, self.what = buf, 0, what

    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def _take(self, n: int) -> memoryview:
        if self.remaining() < n:
            raise TruncatedFileError(f"{self.what}: needed {n} bytes, {self.remaining()} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self._take(size))

    def floats(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self._take(n * 4), dtype=F32).astype(np.float32).reshape(shape)

    def raw(self, n: int) -> bytes:
        return bytes(self._take(n))


def f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype=F32).tobytes()


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
