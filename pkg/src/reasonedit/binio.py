"""Little-endian binary primitives shared by the codebook snapshot format
and the embedding-dump format consumed by the file provider."""
from __future__ import annotations

import struct
from typing import BinaryIO, Iterable

import numpy as np

from .errors import SnapshotFormatError

CODEBOOK_MAGIC = b"RECB"
EMBED_DUMP_MAGIC = b"REEM"


class Writer:
    def __init__(self) -> None:
        self._chunks: list[bytes] = []

    def raw(self, data: bytes) -> None:
        self._chunks.append(data)

    def u8(self, value: int) -> None:
        self._chunks.append(struct.pack("<B", value))

    def u32(self, value: int) -> None:
        self._chunks.append(struct.pack("<I", value))

    def u64(self, value: int) -> None:
        self._chunks.append(struct.pack("<Q", value))

    def i32(self, value: int) -> None:
        self._chunks.append(struct.pack("<i", value))

    def f64(self, value: float) -> None:
        self._chunks.append(struct.pack("<d", value))

    def text(self, value: str) -> None:
        data = value.encode("utf-8")
        self.u32(len(data))
        self._chunks.append(data)

    def f32_array(self, values: np.ndarray) -> None:
        arr = np.ascontiguousarray(values, dtype=np.float32)
        self.u32(arr.size)
        self._chunks.append(arr.astype("<f4", copy=False).tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)


class Reader:
    def __init__(self, data: bytes):
        self._view = memoryview(data)
        self._pos = 0

    def _take(self, count: int) -> memoryview:
        if self._pos + count > len(self._view):
            raise SnapshotFormatError("truncated data")
        chunk = self._view[self._pos : self._pos + count]
        self._pos += count
        return chunk

    def raw(self, count: int) -> bytes:
        return bytes(self._take(count))

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self._take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        length = self.u32()
        try:
            return bytes(self._take(length)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SnapshotFormatError("invalid UTF-8 payload") from exc

    def f32_array(self) -> np.ndarray:
        size = self.u32()
        data = self._take(4 * size)
        return np.frombuffer(data, dtype="<f4").astype(np.float32, copy=True)

    def expect_end(self) -> None:
        if self._pos != len(self._view):
            raise SnapshotFormatError("trailing bytes after payload")


def write_embedding_dump(
    out: BinaryIO, dim: int, records: Iterable[tuple[str, np.ndarray]]
) -> int:
    """Write an embedding dump: magic, version, dim, count, then
    (length-prefixed id, dim little-endian float32) per record.

    Returns the number of records written.
    """
    body = Writer()
    count = 0
    for record_id, values in records:
        arr = np.asarray(values, dtype=np.float32)
        if arr.ndim != 1 or arr.size != dim:
            raise SnapshotFormatError(
                f"record {record_id!r} has {arr.size} values, dump dim is {dim}"
            )
        body.text(record_id)
        body.raw(arr.astype("<f4", copy=False).tobytes())
        count += 1
    head = Writer()
    head.raw(EMBED_DUMP_MAGIC)
    head.u32(1)
    head.u32(dim)
    head.u64(count)
    out.write(head.getvalue())
    out.write(body.getvalue())
    return count


def read_embedding_dump(data: bytes) -> tuple[int, dict[str, np.ndarray]]:
    reader = Reader(data)
    if reader.raw(4) != EMBED_DUMP_MAGIC:
        raise SnapshotFormatError("not an embedding dump (bad magic)")
    version = reader.u32()
    if version != 1:
        raise SnapshotFormatError(f"unsupported embedding dump version {version}")
    dim = reader.u32()
    count = reader.u64()
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        record_id = reader.text()
        payload = reader.raw(4 * dim)
        records[record_id] = np.frombuffer(payload, dtype="<f4").astype(np.float32, copy=True)
    reader.expect_end()
    return dim, records
