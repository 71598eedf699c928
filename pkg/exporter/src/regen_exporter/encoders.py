"""Text embedding backends for export jobs.

The built-in ``hashing`` model maps each token to a fixed pseudo-random
unit direction derived from a keyed hash and L2-normalizes the token
mean. It downloads nothing and produces identical vectors on every
platform, so exports stay reproducible in sealed environments. Any
other model name is resolved through sentence-transformers when that
package is installed.
"""

from __future__ import annotations

import hashlib
import re
from typing import Sequence

import numpy as np

_TOKEN = re.compile(r"[a-z0-9']+")


class ModelLoadError(RuntimeError):
    """A backend could not be constructed."""


class HashingEncoder:
    """Deterministic bag-of-tokens encoder with no model artifacts.

    Token directions come from a seeded hash, so separate processes
    agree without sharing state. Averaging makes documents order
    insensitive: good enough for plumbing and scale tests, not a
    substitute for a trained encoder.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            key = f"{self.seed}:{token}".encode("utf-8")
            digest = hashlib.blake2b(key, digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._token_cache[token] = vec
        return vec

    def embed(self, text: str) -> np.ndarray:
        tokens = _TOKEN.findall(text.lower())
        if not tokens:
            return np.zeros(self.dim)
        mean = np.mean([self._token_vector(t) for t in tokens], axis=0)
        norm = float(np.linalg.norm(mean))
        return mean / norm if norm > 0 else mean

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self.embed(text) for text in texts])


class SentenceTransformerEncoder:
    """Pretrained sentence-transformers checkpoint behind the same API."""

    def __init__(self, model: str, pool: str = "cls", batch_size: int = 64):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelLoadError(
                f"model '{model}' requires the sentence-transformers package; "
                "install it, or use --model hashing for the built-in encoder"
            ) from exc
        try:
            self._model = SentenceTransformer(model)
        except Exception as exc:  # resolution may touch disk and network
            raise ModelLoadError(f"could not load model '{model}': {exc}") from exc
        self._set_pooling(model, pool)
        self.dim = int(self._model.get_sentence_embedding_dimension())
        self.batch_size = batch_size

    def _set_pooling(self, model: str, pool: str) -> None:
        # Checkpoints bundle their pooling layer; flip its mode flags.
        for module in self._model:
            if hasattr(module, "pooling_mode_cls_token"):
                module.pooling_mode_cls_token = pool == "cls"
                module.pooling_mode_mean_tokens = pool == "mean"
                module.pooling_mode_max_tokens = False
                module.pooling_mode_mean_sqrt_len_tokens = False
                return
        raise ModelLoadError(
            f"model '{model}' exposes no pooling layer to set pool='{pool}'"
        )

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        return np.asarray(
            self._model.encode(
                list(texts),
                batch_size=self.batch_size,
                convert_to_numpy=True,
                show_progress_bar=False,
            ),
            dtype=np.float64,
        )

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]
