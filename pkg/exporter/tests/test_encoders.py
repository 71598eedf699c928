"""Hashing encoder properties and backend selection behavior."""

import importlib.util

import numpy as np
import pytest

from regen_exporter.encoders import (
    HashingEncoder,
    ModelLoadError,
    SentenceTransformerEncoder,
)


def test_same_text_same_vector_across_instances():
    a = HashingEncoder(dim=32).embed("alpha beta gamma")
    b = HashingEncoder(dim=32).embed("alpha beta gamma")
    assert a.tolist() == b.tolist()


def test_nonempty_text_embeds_to_unit_norm():
    vec = HashingEncoder(dim=48).embed("one two three four")
    assert abs(float(np.linalg.norm(vec)) - 1.0) < 1e-12
    assert vec.shape == (48,)


def test_token_order_does_not_matter():
    enc = HashingEncoder(dim=32)
    assert np.allclose(enc.embed("alpha beta"), enc.embed("beta alpha"), atol=1e-12)


def test_tokenization_strips_punctuation_and_case():
    enc = HashingEncoder(dim=32)
    assert enc.embed("Alpha, beta.").tolist() == enc.embed("alpha beta").tolist()


def test_empty_text_embeds_to_zeros():
    assert HashingEncoder(dim=16).embed("???").tolist() == [0.0] * 16


def test_different_seeds_give_different_vectors():
    a = HashingEncoder(dim=32, seed=0).embed("alpha")
    b = HashingEncoder(dim=32, seed=1).embed("alpha")
    assert not np.allclose(a, b)


def test_shared_vocabulary_means_higher_cosine():
    enc = HashingEncoder(dim=64)
    base = enc.embed("red green blue")
    near = enc.embed("red green yellow")
    far = enc.embed("cat dog bird")
    assert float(base @ near) > float(base @ far)


def test_embed_batch_stacks_per_text_embeddings():
    enc = HashingEncoder(dim=24)
    texts = ["alpha beta", "", "gamma"]
    batch = enc.embed_batch(texts)
    assert batch.shape == (3, 24)
    for row, text in zip(batch, texts):
        assert row.tolist() == enc.embed(text).tolist()
    assert enc.embed_batch([]).shape == (0, 24)


def test_dim_must_be_positive():
    with pytest.raises(ValueError, match="dim must be positive"):
        HashingEncoder(dim=0)


@pytest.mark.skipif(
    importlib.util.find_spec("sentence_transformers") is not None,
    reason="sentence-transformers is installed; missing-backend path not reachable",
)
def test_pretrained_backend_without_package_explains_itself():
    with pytest.raises(ModelLoadError, match="sentence-transformers"):
        SentenceTransformerEncoder("all-MiniLM-L6-v2")
