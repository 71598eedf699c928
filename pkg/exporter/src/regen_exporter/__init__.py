"""Corpus embedding exporter.

Reads id/text JSONL files, embeds each row with a pluggable text
encoder, and writes the binary embedding container used by retrieval
tooling. The built-in hashing model works fully offline; pretrained
sentence-transformers checkpoints plug in by name.
"""

from . import cli, encoders, rgenio
from .encoders import HashingEncoder, ModelLoadError, SentenceTransformerEncoder
from .export import (
    HASHING_MODEL,
    ExportJob,
    ExportSummary,
    build_encoder,
    export_embeddings,
    read_rows,
)
from .rgenio import FormatError, read_embeddings, write_embeddings

__version__ = "0.1.0"

__all__ = [
    "HASHING_MODEL",
    "ExportJob",
    "ExportSummary",
    "FormatError",
    "HashingEncoder",
    "ModelLoadError",
    "SentenceTransformerEncoder",
    "build_encoder",
    "cli",
    "encoders",
    "export_embeddings",
    "read_embeddings",
    "read_rows",
    "rgenio",
    "write_embeddings",
]
