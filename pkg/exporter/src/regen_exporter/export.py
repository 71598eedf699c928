"""Corpus-to-embedding-file export jobs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import HashingEncoder, SentenceTransformerEncoder
from .rgenio import write_embeddings

HASHING_MODEL = "hashing"


@dataclass(frozen=True)
class ExportJob:
    """One corpus-to-embeddings run.

    ``pool`` may stay None to take the backend default: cls for
    pretrained checkpoints, mean for the hashing model (which has no
    sentence-level state to pool from). ``dim`` and ``seed`` apply to
    the hashing model only; pretrained models fix their own width.
    """

    corpus: tuple[Path, ...]
    out: Path
    model: str = HASHING_MODEL
    pool: str | None = None
    batch_size: int = 64
    queries: tuple[Path, ...] = ()
    dim: int = 256
    seed: int = 0

    def __post_init__(self):
        if not self.corpus:
            raise ValueError("need at least one corpus file")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.pool not in (None, "cls", "mean"):
            raise ValueError(f"unknown pooling mode '{self.pool}'")


@dataclass(frozen=True)
class ExportSummary:
    records: int
    dim: int
    out: Path


def read_rows(paths: Sequence[Path]) -> list[tuple[str, str]]:
    """id/text pairs from JSONL files, in file order, ids unique overall."""
    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    for path in paths:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip():
                    continue
                where = f"{path}:{line_no}"
                try:
                    payload = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{where}: invalid JSON: {exc}") from exc
                if not isinstance(payload, dict):
                    raise ValueError(f"{where}: expected an object per line")
                doc_id = payload.get("id")
                text = payload.get("text")
                if not isinstance(doc_id, str) or not doc_id:
                    raise ValueError(f"{where}: 'id' must be a non-empty string")
                if not isinstance(text, str):
                    raise ValueError(f"{where}: 'text' must be a string")
                if doc_id in seen:
                    raise ValueError(f"{where}: duplicate id '{doc_id}'")
                seen.add(doc_id)
                rows.append((doc_id, text))
    if not rows:
        raise ValueError("no documents to export")
    return rows


def build_encoder(job: ExportJob):
    if job.model == HASHING_MODEL:
        if job.pool == "cls":
            raise ValueError(
                "the hashing model averages token vectors and has no cls "
                "state; drop --pool or pass --pool mean"
            )
        return HashingEncoder(dim=job.dim, seed=job.seed)
    return SentenceTransformerEncoder(
        job.model, pool=job.pool or "cls", batch_size=job.batch_size
    )


def export_embeddings(job: ExportJob) -> ExportSummary:
    """Embed every row of the job's files and write them in input order."""
    rows = read_rows(list(job.corpus) + list(job.queries))
    encoder = build_encoder(job)
    batches = [
        encoder.embed_batch([text for _, text in rows[start : start + job.batch_size]])
        for start in range(0, len(rows), job.batch_size)
    ]
    matrix = np.concatenate(batches, axis=0)
    out = Path(job.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(out, list(zip((doc_id for doc_id, _ in rows), matrix)), encoder.dim)
    return ExportSummary(records=len(rows), dim=encoder.dim, out=out)
