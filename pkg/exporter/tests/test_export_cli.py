"""End-to-end export runs through the command line entry point."""

import importlib.util
import json

import numpy as np
import pytest

from regen_exporter.cli import main
from regen_exporter.encoders import HashingEncoder
from regen_exporter.export import ExportJob, export_embeddings, read_rows
from regen_exporter.rgenio import read_embeddings


def _write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


@pytest.fixture()
def corpus_file(tmp_path):
    path = tmp_path / "corpus.jsonl"
    _write_jsonl(
        path,
        [
            {"id": "d1", "text": "red green blue"},
            {"id": "d2", "text": "cat dog bird"},
            {"id": "d3", "text": "sun moon star"},
        ],
    )
    return path


def test_export_preserves_input_order_and_count(tmp_path, corpus_file, capsys):
    out = tmp_path / "emb.rgen"
    assert main(["--corpus", str(corpus_file), "--out", str(out), "--batch", "2"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["records"] == 3
    assert summary["dim"] == 256
    dim, rows = read_embeddings(out)
    assert dim == 256
    assert [doc_id for doc_id, _ in rows] == ["d1", "d2", "d3"]
    for _, vec in rows:
        assert np.all(np.isfinite(vec))


def test_vectors_match_direct_encoder_output(tmp_path, corpus_file):
    out = tmp_path / "emb.rgen"
    assert main(["--corpus", str(corpus_file), "--out", str(out), "--dim", "32"]) == 0
    _, rows = read_embeddings(out)
    enc = HashingEncoder(dim=32)
    expected = enc.embed("cat dog bird").astype(np.float32)
    assert dict(rows)["d2"].tolist() == expected.tolist()


def test_queries_are_appended_after_the_corpus(tmp_path, corpus_file):
    queries = tmp_path / "queries.jsonl"
    _write_jsonl(queries, [{"id": "query::1::0", "text": "red"}])
    out = tmp_path / "emb.rgen"
    code = main(
        ["--corpus", str(corpus_file), "--queries", str(queries), "--out", str(out)]
    )
    assert code == 0
    _, rows = read_embeddings(out)
    assert [doc_id for doc_id, _ in rows] == ["d1", "d2", "d3", "query::1::0"]


def test_same_job_twice_writes_identical_bytes(tmp_path, corpus_file):
    out_a, out_b = tmp_path / "a.rgen", tmp_path / "b.rgen"
    for out in (out_a, out_b):
        assert main(["--corpus", str(corpus_file), "--out", str(out)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()


def test_missing_corpus_file_exits_one(tmp_path, capsys):
    code = main(["--corpus", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_duplicate_id_across_files_exits_one(tmp_path, corpus_file, capsys):
    queries = tmp_path / "queries.jsonl"
    _write_jsonl(queries, [{"id": "d1", "text": "red"}])
    code = main(
        [
            "--corpus", str(corpus_file),
            "--queries", str(queries),
            "--out", str(tmp_path / "o.rgen"),
        ]
    )
    assert code == 1
    assert "duplicate id 'd1'" in capsys.readouterr().err


def test_cls_pooling_with_hashing_model_exits_one(tmp_path, corpus_file, capsys):
    code = main(
        ["--corpus", str(corpus_file), "--out", str(tmp_path / "o"), "--pool", "cls"]
    )
    assert code == 1
    assert "mean" in capsys.readouterr().err


def test_invalid_rows_are_reported_with_position(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "text": "x"}\nnot json\n', encoding="utf-8")
    with pytest.raises(ValueError, match=r"bad\.jsonl:2: invalid JSON"):
        read_rows([bad])
    bad.write_text('{"id": 7, "text": "x"}\n', encoding="utf-8")
    with pytest.raises(ValueError, match="'id' must be a non-empty string"):
        read_rows([bad])
    bad.write_text('{"id": "a"}\n', encoding="utf-8")
    with pytest.raises(ValueError, match="'text' must be a string"):
        read_rows([bad])
    bad.write_text("\n\n", encoding="utf-8")
    with pytest.raises(ValueError, match="no documents"):
        read_rows([bad])


def test_bad_batch_size_exits_one(tmp_path, corpus_file, capsys):
    code = main(
        ["--corpus", str(corpus_file), "--out", str(tmp_path / "o"), "--batch", "0"]
    )
    assert code == 1
    assert "batch size" in capsys.readouterr().err


def test_missing_out_flag_is_a_usage_error(corpus_file, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--corpus", str(corpus_file)])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.skipif(
    importlib.util.find_spec("sentence_transformers") is not None,
    reason="sentence-transformers is installed; missing-backend path not reachable",
)
def test_pretrained_model_without_backend_exits_one(tmp_path, corpus_file, capsys):
    code = main(
        [
            "--corpus", str(corpus_file),
            "--out", str(tmp_path / "o"),
            "--model", "all-MiniLM-L6-v2",
        ]
    )
    assert code == 1
    assert "sentence-transformers" in capsys.readouterr().err


def test_export_job_api_round_trip(tmp_path, corpus_file):
    out = tmp_path / "nested" / "emb.rgen"  # parent dirs are created
    summary = export_embeddings(
        ExportJob(corpus=(corpus_file,), out=out, dim=16, batch_size=2)
    )
    assert summary.records == 3
    assert summary.dim == 16
    dim, rows = read_embeddings(out)
    assert dim == 16
    assert len(rows) == 3
