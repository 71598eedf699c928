"""Binary embedding file format: round trips and an independent codec oracle."""

import struct

import numpy as np
import pytest

from regen.vecio import EmbeddingRecord, FormatError, read_embeddings, write_embeddings


def oracle_write(path, ids, matrix):
    # Independent writer built straight from the format description:
    # magic, version u32, dim u32, count u64, then per record
    # id_len u16 + utf-8 id + dim float32 little-endian values.
    with open(path, "wb") as f:
        f.write(b"RGEN")
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<I", matrix.shape[1]))
        f.write(struct.pack("<Q", len(ids)))
        for i, rid in enumerate(ids):
            raw = rid.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(matrix[i].astype("<f4").tobytes())


def oracle_read(path):
    with open(path, "rb") as f:
        data = f.read()
    assert data[:4] == b"RGEN"
    version, dim = struct.unpack_from("<II", data, 4)
    assert version == 1
    (count,) = struct.unpack_from("<Q", data, 12)
    off = 20
    out = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        rid = data[off : off + id_len].decode("utf-8")
        off += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
        off += 4 * dim
        out.append((rid, vec))
    return out


def random_records(n=7, dim=5, seed=0):
    rng = np.random.default_rng(seed)
    mat = rng.standard_normal((n, dim)).astype(np.float32)
    # Exercise signed zero, denormals, and large magnitudes too.
    mat[0, 0] = np.float32(-0.0)
    mat[0, 1] = np.float32(1e-45)
    mat[1, 0] = np.float32(3.0e38)
    ids = [f"doc-{i}" for i in range(n)]
    return [EmbeddingRecord(ids[i], mat[i]) for i in range(n)], ids, mat


class TestRoundTrip:
    def test_write_then_read_bit_exact(self, tmp_path):
        records, ids, mat = random_records()
        path = tmp_path / "e.bin"
        write_embeddings(path, records)
        back = read_embeddings(path)
        assert [r.id for r in back] == ids
        for r, original in zip(back, mat):
            assert r.vector.dtype == np.float32
            assert r.vector.tobytes() == original.tobytes()

    def test_library_writer_against_independent_reader(self, tmp_path):
        records, ids, mat = random_records(seed=1)
        path = tmp_path / "e.bin"
        write_embeddings(path, records)
        parsed = oracle_read(path)
        assert [p[0] for p in parsed] == ids
        for (_, vec), original in zip(parsed, mat):
            assert vec.tobytes() == original.tobytes()

    def test_independent_writer_against_library_reader(self, tmp_path):
        _, ids, mat = random_records(seed=2)
        path = tmp_path / "e.bin"
        oracle_write(path, ids, mat)
        back = read_embeddings(path)
        assert [r.id for r in back] == ids
        for r, original in zip(back, mat):
            assert r.vector.tobytes() == original.tobytes()

    def test_unicode_ids_length_in_bytes(self, tmp_path):
        vec = np.ones(3, dtype=np.float32)
        records = [EmbeddingRecord("héllo-ü", vec), EmbeddingRecord("ascii", vec)]
        path = tmp_path / "e.bin"
        write_embeddings(path, records)
        back = read_embeddings(path)
        assert [r.id for r in back] == ["héllo-ü", "ascii"]

    def test_float64_input_stored_as_float32(self, tmp_path):
        vec64 = np.array([0.1, 0.2], dtype=np.float64)
        path = tmp_path / "e.bin"
        write_embeddings(path, [EmbeddingRecord("a", vec64)])
        (back,) = read_embeddings(path)
        assert back.vector.dtype == np.float32
        np.testing.assert_array_equal(back.vector, vec64.astype(np.float32))

    def test_trailing_bytes_after_records_tolerated(self, tmp_path):
        # The embedding block is reused as the leading section of other
        # files, so the reader must stop after `count` records.
        records, ids, _ = random_records(n=3)
        path = tmp_path / "e.bin"
        write_embeddings(path, records)
        with open(path, "ab") as f:
            f.write(b"EXTRA-SECTION")
        back = read_embeddings(path)
        assert [r.id for r in back] == ids


class TestWriteErrors:
    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_embeddings(tmp_path / "e.bin", [])

    def test_duplicate_ids_rejected(self, tmp_path):
        vec = np.ones(2, dtype=np.float32)
        with pytest.raises(ValueError, match="duplicate"):
            write_embeddings(
                tmp_path / "e.bin",
                [EmbeddingRecord("a", vec), EmbeddingRecord("a", vec)],
            )

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_rejected(self, tmp_path, bad):
        vec = np.array([1.0, bad], dtype=np.float32)
        with pytest.raises(ValueError, match="finite"):
            write_embeddings(tmp_path / "e.bin", [EmbeddingRecord("a", vec)])

    def test_dim_mismatch_rejected(self, tmp_path):
        records = [
            EmbeddingRecord("a", np.ones(3, dtype=np.float32)),
            EmbeddingRecord("b", np.ones(4, dtype=np.float32)),
        ]
        with pytest.raises(ValueError, match="dim"):
            write_embeddings(tmp_path / "e.bin", records)

    def test_empty_id_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_embeddings(
                tmp_path / "e.bin",
                [EmbeddingRecord("", np.ones(2, dtype=np.float32))],
            )


class TestReadErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "e.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            read_embeddings(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "e.bin"
        path.write_bytes(b"RGEN" + struct.pack("<IIQ", 9, 2, 0))
        with pytest.raises(FormatError, match="version"):
            read_embeddings(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "e.bin"
        path.write_bytes(b"RGEN" + struct.pack("<I", 1))
        with pytest.raises(FormatError, match="truncat"):
            read_embeddings(path)

    def test_truncated_records(self, tmp_path):
        records, _, _ = random_records(n=4)
        path = tmp_path / "e.bin"
        write_embeddings(path, records)
        data = path.read_bytes()
        path.write_bytes(data[:-7])
        with pytest.raises(FormatError, match="truncat"):
            read_embeddings(path)
