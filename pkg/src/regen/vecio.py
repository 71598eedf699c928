"""Binary embedding file I/O.

Layout, all integers little-endian:

    magic   4 bytes  b"RGEN"
    version u32      currently 1
    dim     u32
    count   u64
    then per record:
        id_len  u16
        id      id_len bytes of UTF-8
        vector  dim float32 values

The reader stops after ``count`` records and ignores anything after them,
which lets other file formats embed this block as their leading section.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"RGEN"
VERSION = 1
_HEADER = struct.Struct("<II")
_COUNT = struct.Struct("<Q")
_ID_LEN = struct.Struct("<H")


class FormatError(ValueError):
    """The bytes on disk do not match the embedding file format."""


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    id: str
    vector: np.ndarray


def _checked_matrix(records: Sequence[EmbeddingRecord]) -> np.ndarray:
    if not records:
        raise ValueError("no records to write")
    dim = np.asarray(records[0].vector).shape[-1]
    seen = set()
    rows = []
    for rec in records:
        if not rec.id:
            raise ValueError("empty record id")
        if rec.id in seen:
            raise ValueError(f"duplicate record id '{rec.id}'")
        seen.add(rec.id)
        vec = np.asarray(rec.vector, dtype=np.float32).reshape(-1)
        if vec.shape[0] != dim:
            raise ValueError(
                f"dim mismatch: record '{rec.id}' has {vec.shape[0]}, expected {dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"non-finite values in record '{rec.id}'")
        rows.append(vec)
    return np.stack(rows)


def write_block(f: BinaryIO, records: Sequence[EmbeddingRecord]) -> None:
    """Write an embedding block to an open binary stream."""
    matrix = _checked_matrix(records)
    f.write(MAGIC)
    f.write(_HEADER.pack(VERSION, matrix.shape[1]))
    f.write(_COUNT.pack(len(records)))
    for rec, row in zip(records, matrix):
        raw = rec.id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"record id longer than 65535 bytes: '{rec.id[:40]}...'")
        f.write(_ID_LEN.pack(len(raw)))
        f.write(raw)
        f.write(row.astype("<f4").tobytes())


def read_block(f: BinaryIO) -> list[EmbeddingRecord]:
    """Read one embedding block from an open binary stream."""

    def take(n: int, what: str) -> bytes:
        chunk = f.read(n)
        if len(chunk) != n:
            raise FormatError(f"truncated file while reading {what}")
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, dim = _HEADER.unpack(take(_HEADER.size, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}")
    (count,) = _COUNT.unpack(take(_COUNT.size, "record count"))

    records = []
    for i in range(count):
        (id_len,) = _ID_LEN.unpack(take(_ID_LEN.size, f"record {i} id length"))
        rid = take(id_len, f"record {i} id").decode("utf-8")
        raw = take(4 * dim, f"record {i} vector")
        vec = np.frombuffer(raw, dtype="<f4").copy()
        records.append(EmbeddingRecord(rid, vec))
    return records


def write_embeddings(path: str | Path, records: Sequence[EmbeddingRecord]) -> None:
    with open(path, "wb") as f:
        write_block(f, records)


def read_embeddings(path: str | Path) -> list[EmbeddingRecord]:
    with open(path, "rb") as f:
        return read_block(f)
