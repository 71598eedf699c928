"""Corpus loading and sentence-pair sampling.

The corpus file format is UTF-8 JSON lines. Every record is an object with a
required non-empty string ``id``, a required string ``text``, and an optional
string ``source``. Anything else on a line is a hard error, including
comment-style lines: this format has no comments, so a line beginning with
``#`` is rejected rather than skipped.
"""

from __future__ import annotations

import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class CorpusFormatError(ValueError):
    """A corpus file violates the line format or record schema."""


class DuplicateIdError(CorpusFormatError):
    """The same document id appears more than once."""


class EmptyCorpusError(ValueError):
    """Loading produced no documents at all."""


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    source: str | None = None


@dataclass(frozen=True)
class Corpus:
    """An immutable document collection with by-id lookup and word stats."""

    documents: tuple[Document, ...]
    _by_id: dict[str, Document] = field(init=False, repr=False, compare=False)
    n_words: int = field(init=False, compare=False)

    def __post_init__(self):
        by_id = {d.id: d for d in self.documents}
        if len(by_id) != len(self.documents):
            raise DuplicateIdError("corpus contains duplicate document ids")
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(
            self, "n_words", sum(len(d.text.split()) for d in self.documents)
        )

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def __len__(self) -> int:
        return len(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def get(self, doc_id: str) -> Document:
        return self._by_id[doc_id]


@dataclass(frozen=True)
class ContrastivePair:
    """Two disjoint sentences drawn from the same document."""

    anchor: str
    positive: str
    doc_id: str


def _worker_count() -> int:
    raw = os.environ.get("REGEN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parse_file(path: Path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            where = f"{path}, line {lineno}"
            if line.startswith("#"):
                raise CorpusFormatError(
                    f"comment-style line is not valid JSONL ({where})"
                )
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusFormatError(f"invalid JSON ({where}): {err}") from err
            if not isinstance(record, dict):
                raise CorpusFormatError(f"record is not an object ({where})")
            doc_id = record.get("id")
            text = record.get("text")
            source = record.get("source")
            if not isinstance(doc_id, str) or not doc_id:
                raise CorpusFormatError(f"missing or invalid 'id' ({where})")
            if not isinstance(text, str):
                raise CorpusFormatError(f"missing or invalid 'text' ({where})")
            if source is not None and not isinstance(source, str):
                raise CorpusFormatError(f"invalid 'source' ({where})")
            docs.append(Document(id=doc_id, text=text, source=source))
    return docs


def load_corpus(
    paths: str | Path | Sequence[str | Path],
    min_words: int = 10,
) -> Corpus:
    """Load one or more JSONL shards into a single corpus.

    Documents shorter than ``min_words`` whitespace-delimited words are
    dropped. Shards may be parsed in parallel (``REGEN_THREADS``), but the
    document order is always file order within each shard, shards in the
    order given.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    path_list = [Path(p) for p in paths]
    if not path_list:
        raise ValueError("no corpus paths given")

    workers = min(_worker_count(), len(path_list))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            shards = list(pool.map(_parse_file, path_list))
    else:
        shards = [_parse_file(p) for p in path_list]

    seen: dict[str, Path] = {}
    kept = []
    for path, shard in zip(path_list, shards):
        for doc in shard:
            if doc.id in seen:
                raise DuplicateIdError(
                    f"duplicate document id '{doc.id}' in {path} "
                    f"(first seen in {seen[doc.id]})"
                )
            seen[doc.id] = path
            if len(doc.text.split()) >= min_words:
                kept.append(doc)

    if not kept:
        raise EmptyCorpusError(
            f"no documents with at least {min_words} words in "
            + ", ".join(str(p) for p in path_list)
        )
    return Corpus(tuple(kept))


# A sentence boundary is a run of terminal punctuation (optionally followed
# by closing quotes or brackets) plus the whitespace after it. Abbreviation
# handling is deliberately out of scope.
_BOUNDARY = re.compile(r"[.!?]+['\")\]]*\s+")


def split_sentences(text: str) -> list[str]:
    """Split text into sentence spans on ``.``, ``!``, ``?`` boundaries.

    The raw spans partition the input exactly; the returned spans are the
    same spans with surrounding whitespace trimmed, empties dropped. Text
    without terminal punctuation comes back as a single span.
    """
    if not text:
        raise ValueError("cannot split empty text")
    spans = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        spans.append(text[start : m.end()])
        start = m.end()
    if start < len(text):
        spans.append(text[start:])
    trimmed = [s.strip() for s in spans]
    trimmed = [s for s in trimmed if s]
    return trimmed or [text]


def sample_pairs(corpus: Corpus, n: int, seed: int) -> list[ContrastivePair]:
    """Draw ``n`` anchor/positive sentence pairs for contrastive training.

    Each draw picks a document uniformly from those with at least two
    distinct sentences, then two sentence positions with different text.
    The two sides of a pair are never byte-identical.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    eligible: list[tuple[str, list[str]]] = []
    for doc in corpus:
        sentences = split_sentences(doc.text)
        if len(sentences) >= 2 and len(set(sentences)) >= 2:
            eligible.append((doc.id, sentences))
    if not eligible:
        raise ValueError("no document has two distinct sentences to pair")

    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n:
        doc_id, sentences = eligible[int(rng.integers(len(eligible)))]
        m = len(sentences)
        i = int(rng.integers(m))
        j = int(rng.integers(m - 1))
        if j >= i:
            j += 1
        if sentences[i] == sentences[j]:
            continue
        pairs.append(ContrastivePair(sentences[i], sentences[j], doc_id))
    return pairs
