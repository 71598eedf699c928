"""Trainable text encoder with an in-batch contrastive objective.

The encoder is deliberately small: a frequency-capped vocabulary with
single-character fallback for unknown words, mean pooling over an embedding
table, and one linear projection. Training pulls two sentences of the same
document together against the other positives in the batch.
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .corpus import ContrastivePair

logger = logging.getLogger(__name__)

_WORD = re.compile(r"[a-z0-9]+")
_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"

_ENC_MAGIC = b"RENC"
_ENC_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by the gradient-trained components."""

    learning_rate: float = 1e-4
    batch_size: int | None = None
    epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size is not None and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def infonce_from_similarity(sim: np.ndarray):
    """Contrastive loss on a precomputed similarity matrix.

    Row i scores example i's anchor against every positive in the batch;
    the diagonal holds the matching pair. Returns the mean loss, the
    per-example losses, and the gradient w.r.t. the similarity matrix.
    Computation shifts each row by its max, so the result is invariant to
    adding a constant and stays finite for large magnitudes.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {sim.shape}")
    n = sim.shape[0]
    if n < 2:
        raise ValueError("need at least 2 examples for in-batch negatives")
    if not np.all(np.isfinite(sim)):
        raise ValueError("non-finite similarities")

    shifted = sim - sim.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1)
    log_softmax_diag = np.diag(shifted) - np.log(denom)
    per_example = -log_softmax_diag
    loss = float(per_example.mean())

    softmax = exp / denom[:, None]
    grad = (softmax - np.eye(n)) / n
    return loss, per_example, grad


def infonce_loss(anchors: np.ndarray, positives: np.ndarray, tau: float = 1.0):
    """Mean InfoNCE loss over a batch plus gradients w.r.t. both matrices."""
    anchors = np.asarray(anchors, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64)
    if anchors.shape != positives.shape or anchors.ndim != 2:
        raise ValueError(
            f"anchors and positives must share an (n, dim) shape, got "
            f"{anchors.shape} and {positives.shape}"
        )
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if not (np.all(np.isfinite(anchors)) and np.all(np.isfinite(positives))):
        raise ValueError("non-finite inputs")

    sim = anchors @ positives.T / tau
    loss, _, grad_sim = infonce_from_similarity(sim)
    grad_anchors = grad_sim @ positives / tau
    grad_positives = grad_sim.T @ anchors / tau
    return loss, grad_anchors, grad_positives


def build_vocabulary(texts: Iterable[str], vocab_size: int) -> dict[str, int]:
    """Frequency-ranked word vocabulary with fixed single-character slots.

    The 36 characters a-z0-9 always occupy the first rows so any word can
    fall back to its characters. Remaining slots go to multi-character
    words by descending frequency, ties broken alphabetically.
    """
    if vocab_size < len(_CHARS):
        raise ValueError(f"vocab_size must be at least {len(_CHARS)}")
    counts: dict[str, int] = {}
    for text in texts:
        for word in _WORD.findall(text.lower()):
            if len(word) > 1:
                counts[word] = counts.get(word, 0) + 1
    budget = vocab_size - len(_CHARS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:budget]
    vocab = {ch: i for i, ch in enumerate(_CHARS)}
    for word, _ in ranked:
        vocab[word] = len(vocab)
    return vocab


class ContrastiveEncoder(BaseEstimator, TransformerMixin):
    """Mean-pooled embedding table plus linear projection, trained with
    in-batch contrastive pairs.

    ``fit`` expects a sequence of :class:`ContrastivePair`; ``transform``
    maps texts to dense vectors. Texts that tokenize to nothing embed to
    the zero vector (logged as a warning).
    """

    def __init__(
        self,
        dim: int = 64,
        vocab_size: int = 32768,
        temperature: float = 1.0,
        normalize: bool = False,
        max_tokens: int = 256,
        seed: int = 0,
    ):
        self.dim = dim
        self.vocab_size = vocab_size
        self.temperature = temperature
        self.normalize = normalize
        self.max_tokens = max_tokens
        self.seed = seed

    @classmethod
    def from_parameters(
        cls,
        vocab: dict[str, int],
        embedding_table: np.ndarray,
        projection: np.ndarray,
        temperature: float = 1.0,
        normalize: bool = False,
        max_tokens: int = 256,
    ) -> "ContrastiveEncoder":
        """Construct an already-fitted encoder from explicit parameters."""
        table = np.asarray(embedding_table, dtype=np.float64)
        proj = np.asarray(projection, dtype=np.float64)
        dim = proj.shape[0]
        if proj.shape != (dim, dim) or table.shape[1] != dim:
            raise ValueError("projection and embedding table shapes disagree")
        if sorted(vocab.values()) != list(range(len(vocab))):
            raise ValueError("vocabulary rows must be a permutation of 0..V-1")
        if table.shape[0] != len(vocab):
            raise ValueError("embedding table rows must match vocabulary size")
        enc = cls(
            dim=dim,
            vocab_size=max(len(vocab), len(_CHARS)),
            temperature=temperature,
            normalize=normalize,
            max_tokens=max_tokens,
        )
        enc.vocab_ = dict(vocab)
        enc.embedding_table_ = table
        enc.projection_ = proj
        enc.loss_history_ = []
        return enc

    def _check_fitted(self):
        if not hasattr(self, "embedding_table_"):
            raise NotFittedError("encoder has not been fitted or loaded")

    def token_ids(self, text: str) -> np.ndarray:
        """Vocabulary rows for a text: known words, else their characters."""
        self._check_fitted()
        ids: list[int] = []
        for word in _WORD.findall(text.lower()):
            row = self.vocab_.get(word)
            if row is not None:
                ids.append(row)
            else:
                ids.extend(
                    self.vocab_[ch] for ch in word if ch in self.vocab_
                )
            if len(ids) >= self.max_tokens:
                break
        return np.asarray(ids[: self.max_tokens], dtype=np.intp)

    def _pooled(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        ids = self.token_ids(text)
        if len(ids) == 0:
            return np.zeros(self.dim), ids
        return self.embedding_table_[ids].mean(axis=0), ids

    def embed(self, text: str) -> np.ndarray:
        """Embed one text as a float64 vector of length ``dim``."""
        pooled, ids = self._pooled(text)
        if len(ids) == 0:
            logger.warning("text produced no tokens, embedding as zeros: %.40r", text)
            return np.zeros(self.dim)
        vec = pooled @ self.projection_
        if self.normalize:
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec = vec / norm
        return vec

    def transform(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.embed(t) for t in texts])

    def fit(
        self,
        pairs: Sequence[ContrastivePair],
        y=None,
        config: TrainConfig | None = None,
        vocab_texts: Iterable[str] | None = None,
    ) -> "ContrastiveEncoder":
        """Initialize parameters and train on anchor/positive pairs.

        The vocabulary is built from ``vocab_texts`` when given (normally
        the whole corpus), otherwise from the pair texts. Batches that
        would be left incomplete at the end of an epoch are dropped.
        """
        cfg = config or TrainConfig()
        if not pairs:
            raise ValueError("no training pairs")
        batch = cfg.batch_size or min(400, len(pairs))
        if len(pairs) < batch:
            raise ValueError(
                f"need at least batch_size={batch} pairs, got {len(pairs)}"
            )

        if vocab_texts is None:
            vocab_texts = [p.anchor for p in pairs] + [p.positive for p in pairs]
        self.vocab_ = build_vocabulary(vocab_texts, self.vocab_size)

        init_rng = np.random.default_rng(self.seed)
        self.embedding_table_ = init_rng.normal(
            0.0, self.dim**-0.5, size=(len(self.vocab_), self.dim)
        )
        # Identity projection keeps the untrained encoder a plain
        # bag-of-embeddings model; training bends it from there.
        self.projection_ = np.eye(self.dim)
        self.loss_history_ = []

        anchor_ids = [self.token_ids(p.anchor) for p in pairs]
        positive_ids = [self.token_ids(p.positive) for p in pairs]
        rng = np.random.default_rng(cfg.seed)
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(pairs))
            epoch_losses = []
            for start in range(0, len(pairs) - batch + 1, batch):
                chosen = order[start : start + batch]
                loss = self._step(
                    [anchor_ids[i] for i in chosen],
                    [positive_ids[i] for i in chosen],
                    cfg.learning_rate,
                )
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"contrastive training diverged at epoch {epoch}, "
                        f"batch starting {start}: loss={loss}"
                    )
                epoch_losses.append(loss)
            self.loss_history_.append(float(np.mean(epoch_losses)))
            logger.debug("contrastive epoch %d loss %.4f", epoch, self.loss_history_[-1])
        return self

    def _gather(self, ids_list: list[np.ndarray]) -> np.ndarray:
        pooled = np.zeros((len(ids_list), self.dim))
        for i, ids in enumerate(ids_list):
            if len(ids):
                pooled[i] = self.embedding_table_[ids].mean(axis=0)
        return pooled

    def _step(self, anchor_ids, positive_ids, lr: float) -> float:
        pooled_a = self._gather(anchor_ids)
        pooled_p = self._gather(positive_ids)
        proj = self.projection_
        loss, grad_a, grad_p = infonce_loss(
            pooled_a @ proj, pooled_p @ proj, self.temperature
        )

        grad_proj = pooled_a.T @ grad_a + pooled_p.T @ grad_p
        grad_pooled_a = grad_a @ proj.T
        grad_pooled_p = grad_p @ proj.T
        self._scatter_table_grad(anchor_ids, grad_pooled_a, lr)
        self._scatter_table_grad(positive_ids, grad_pooled_p, lr)
        self.projection_ = proj - lr * grad_proj
        return loss

    def _scatter_table_grad(self, ids_list, grad_pooled, lr: float):
        rows = []
        contribs = []
        for i, ids in enumerate(ids_list):
            if len(ids):
                rows.append(ids)
                contribs.append(np.repeat(grad_pooled[i : i + 1] / len(ids), len(ids), 0))
        if not rows:
            return
        flat = np.concatenate(rows)
        contrib = np.concatenate(contribs)
        uniq, inverse = np.unique(flat, return_inverse=True)
        buf = np.zeros((len(uniq), self.dim))
        np.add.at(buf, inverse, contrib)
        self.embedding_table_[uniq] -= lr * buf

    def save(self, path: str | Path) -> None:
        """Serialize vocabulary and parameters (float64, little-endian)."""
        self._check_fitted()
        by_row = sorted(self.vocab_.items(), key=lambda kv: kv[1])
        with open(path, "wb") as f:
            f.write(_ENC_MAGIC)
            f.write(
                struct.pack(
                    "<IIIIBd",
                    _ENC_VERSION,
                    self.dim,
                    len(by_row),
                    self.max_tokens,
                    int(self.normalize),
                    self.temperature,
                )
            )
            for token, _ in by_row:
                raw = token.encode("utf-8")
                f.write(struct.pack("<H", len(raw)))
                f.write(raw)
            f.write(self.embedding_table_.astype("<f8").tobytes())
            f.write(self.projection_.astype("<f8").tobytes())


def load_encoder(path: str | Path) -> ContrastiveEncoder:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _ENC_MAGIC:
            raise ValueError(f"not an encoder file: bad magic {magic!r}")
        version, dim, n_vocab, max_tokens, normalize, temperature = struct.unpack(
            "<IIIIBd", f.read(struct.calcsize("<IIIIBd"))
        )
        if version != _ENC_VERSION:
            raise ValueError(f"unsupported encoder file version {version}")
        vocab = {}
        for row in range(n_vocab):
            (length,) = struct.unpack("<H", f.read(2))
            vocab[f.read(length).decode("utf-8")] = row
        table = np.frombuffer(f.read(8 * n_vocab * dim), dtype="<f8").reshape(
            n_vocab, dim
        )
        proj = np.frombuffer(f.read(8 * dim * dim), dtype="<f8").reshape(dim, dim)
    return ContrastiveEncoder.from_parameters(
        vocab,
        table,
        proj,
        temperature=temperature,
        normalize=bool(normalize),
        max_tokens=max_tokens,
    )


def embed(encoder, text: str) -> np.ndarray:
    """Functional form of ``encoder.embed`` for symmetry with the other ops."""
    return encoder.embed(text)


def train_contrastive(
    encoder: ContrastiveEncoder,
    pairs: Sequence[ContrastivePair],
    config: TrainConfig | None = None,
    vocab_texts: Iterable[str] | None = None,
) -> ContrastiveEncoder:
    """Functional form of ``encoder.fit``."""
    return encoder.fit(pairs, config=config, vocab_texts=vocab_texts)
