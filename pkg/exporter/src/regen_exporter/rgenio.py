"""Reading and writing the binary embedding container.

Layout, all little endian: magic ``RGEN``, version u32 (always 1),
dim u32, count u64; then per record a u16 id byte length, the UTF-8 id,
and dim float32 values. Vectors are stored as float32 regardless of the
precision they were computed in. Bytes past the last record are ignored
so containers can be extended with auxiliary sections.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"RGEN"
VERSION = 1
_HEADER = struct.Struct("<IIQ")


class FormatError(ValueError):
    """The file does not follow the container layout."""


def write_embeddings(
    path: str | Path, rows: Sequence[tuple[str, np.ndarray]], dim: int
) -> None:
    """Write ``(id, vector)`` rows in order under a ``dim``-wide header."""
    if dim < 1:
        raise ValueError("dim must be positive")
    seen: set[str] = set()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(VERSION, dim, len(rows)))
        for doc_id, vector in rows:
            if doc_id in seen:
                raise ValueError(f"duplicate id '{doc_id}'")
            seen.add(doc_id)
            encoded = doc_id.encode("utf-8")
            if not encoded:
                raise ValueError("empty id")
            if len(encoded) > 0xFFFF:
                raise ValueError(f"id longer than 65535 bytes: '{doc_id[:32]}...'")
            vec = np.asarray(vector, dtype="<f4").reshape(-1)
            if vec.shape[0] != dim:
                raise ValueError(
                    f"vector for '{doc_id}' has dim {vec.shape[0]}, header says {dim}"
                )
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(vec.tobytes())


def read_embeddings(path: str | Path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    """The header dim and all ``(id, float32 vector)`` rows, in file order."""
    data = Path(path).read_bytes()
    if len(data) < 4 + _HEADER.size:
        raise FormatError("truncated header")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}")
    version, dim, count = _HEADER.unpack_from(data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    offset = 4 + _HEADER.size
    rows: list[tuple[str, np.ndarray]] = []
    for n in range(count):
        if offset + 2 > len(data):
            raise FormatError(f"truncated at record {n}")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        end = offset + id_len + 4 * dim
        if end > len(data):
            raise FormatError(f"truncated at record {n}")
        try:
            doc_id = data[offset : offset + id_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"record {n} id is not valid UTF-8") from exc
        offset += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
        rows.append((doc_id, vec))
    return dim, rows
