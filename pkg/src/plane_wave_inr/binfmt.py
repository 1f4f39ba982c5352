from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError

HEADER = struct.Struct("<4sIQ")


def crc32(payload: bytes) -> int:
    return zlib.crc32(payload) & 0xFFFFFFFF


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u32(self, *values: int) -> None:
        self._parts.append(struct.pack(f"<{len(values)}I", *values))

    def u64(self, *values: int) -> None:
        self._parts.append(struct.pack(f"<{len(values)}Q", *values))

    def f32(self, *values: float) -> None:
        self._parts.append(struct.pack(f"<{len(values)}f", *values))

    def array_f32(self, array: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())

    def raw(self, data: bytes) -> None:
        self._parts.append(data)

    def payload(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes, base_offset: int = 0) -> None:
        self.data = data
        self.pos = 0
        self.base_offset = base_offset

    @property
    def offset(self) -> int:
        return self.base_offset + self.pos

    def _take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", offset=self.offset)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, count: int = 1, what: str = "u32") -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self._take(4 * count, what))

    def u64(self, count: int = 1, what: str = "u64") -> tuple[int, ...]:
        return struct.unpack(f"<{count}Q", self._take(8 * count, what))

    def f32(self, count: int = 1, what: str = "f32") -> tuple[float, ...]:
        return struct.unpack(f"<{count}f", self._take(4 * count, what))

    def array_f32(self, shape: tuple[int, ...], what: str) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = self._take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)

    def raw(self, n: int, what: str) -> bytes:
        return self._take(n, what)

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} unexpected trailing bytes", offset=self.offset)


def pack_file(magic: bytes, version: int, payload: bytes) -> bytes:
    """``magic | version u32 | payload length u64 | payload | crc32(payload)``."""
    return HEADER.pack(magic, version, len(payload)) + payload + struct.pack("<I", crc32(payload))


def unpack_file(data: bytes, magic: bytes, versions: set[int]) -> tuple[int, Reader]:
    if len(data) < HEADER.size:
        raise FormatError("file shorter than header", offset=len(data))
    found_magic, version, length = HEADER.unpack_from(data, 0)
    if found_magic != magic:
        raise FormatError(f"bad magic {found_magic!r}, expected {magic!r}", offset=0)
    if version not in versions:
        raise FormatError(f"unsupported version {version}", offset=4)
    end = HEADER.size + length
    if end + 4 > len(data):
        raise FormatError(f"truncated payload: header declares {length} bytes", offset=len(data))
    if end + 4 < len(data):
        raise FormatError("unexpected bytes after checksum", offset=end + 4)
    payload = data[HEADER.size : end]
    (stored,) = struct.unpack_from("<I", data, end)
    if stored != crc32(payload):
        raise FormatError(f"checksum mismatch (stored {stored:#010x}, computed {crc32(payload):#010x})", offset=end)
    return version, Reader(payload, base_offset=HEADER.size)


def write_bytes(path: str | Path, data: bytes) -> int:
    target = Path(path)
    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(data)
    return len(data)
