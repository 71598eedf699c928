"""Quality metrics for synthesized datasets.

All text statistics share one tokenizer: lowercase, split on anything that
is not a letter or digit. Scores are floats in [0, 1].
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def text_counts(texts: Sequence[str]) -> dict[str, int]:
    """Unigram counts over a collection of texts."""
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tokenize(text))
    return dict(counts)


def accuracy(preds: Sequence[int], golds: Sequence[int]) -> float:
    preds = np.asarray(preds)
    golds = np.asarray(golds)
    if preds.shape != golds.shape or preds.ndim != 1:
        raise ValueError("predictions and golds must be equal-length vectors")
    if preds.size == 0:
        raise ValueError("nothing to score")
    return float((preds == golds).mean())


def macro_f1(
    preds: Sequence[int], golds: Sequence[int], n_classes: int | None = None
) -> float:
    """Unweighted mean of per-class F1 over classes 1..n_classes.

    A class that never occurs in either vector contributes an F1 of zero,
    so passing an explicit ``n_classes`` larger than what the data shows
    lowers the average.
    """
    preds = np.asarray(preds)
    golds = np.asarray(golds)
    if preds.shape != golds.shape or preds.ndim != 1:
        raise ValueError("predictions and golds must be equal-length vectors")
    if preds.size == 0:
        raise ValueError("nothing to score")
    c = n_classes or int(max(preds.max(), golds.max()))
    scores = []
    for label in range(1, c + 1):
        tp = int(np.sum((preds == label) & (golds == label)))
        fp = int(np.sum((preds == label) & (golds != label)))
        fn = int(np.sum((preds != label) & (golds == label)))
        if tp == 0:
            scores.append(0.0)
            continue
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def weighted_jaccard(
    counts_a: Mapping[str, float], counts_b: Mapping[str, float]
) -> float:
    """Similarity of two count vectors: sum of minima over sum of maxima."""
    if any(v < 0 for v in counts_a.values()) or any(v < 0 for v in counts_b.values()):
        raise ValueError("counts must be non-negative")
    keys = counts_a.keys() | counts_b.keys()
    min_sum = 0.0
    max_sum = 0.0
    for key in keys:
        a = counts_a.get(key, 0)
        b = counts_b.get(key, 0)
        min_sum += min(a, b)
        max_sum += max(a, b)
    if max_sum == 0:
        raise ValueError("both count vectors are empty")
    return min_sum / max_sum


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def self_bleu(texts: Sequence[str], max_docs: int = 2000, seed: int = 0) -> float:
    """Mean BLEU-4 of each text against all the others as references.

    Standard clipped n-gram precision with brevity penalty; a text shorter
    than four tokens uses the orders it has, and any zero precision zeroes
    that text's score. Collections larger than ``max_docs`` are first
    sampled down deterministically.
    """
    texts = list(texts)
    if len(texts) < 2:
        raise ValueError("self-BLEU needs at least two texts")
    if len(texts) > max_docs:
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(len(texts), size=max_docs, replace=False))
        texts = [texts[i] for i in chosen]

    token_lists = [tokenize(t) for t in texts]
    lengths = np.array([len(t) for t in token_lists])

    # For every order, remember each n-gram's best and second-best count
    # over all documents. The best count excluding the hypothesis itself
    # follows without re-scanning the references per hypothesis.
    per_order_doc_counts: list[list[Counter]] = []
    per_order_best: list[dict] = []
    for n in range(1, 5):
        doc_counts = [_ngram_counts(tokens, n) for tokens in token_lists]
        best: dict[tuple, tuple[int, int, int]] = {}
        for doc_idx, counts in enumerate(doc_counts):
            for gram, count in counts.items():
                top, top_doc, second = best.get(gram, (0, -1, 0))
                if count > top:
                    best[gram] = (count, doc_idx, top)
                elif count > second:
                    best[gram] = (top, top_doc, count)
        per_order_doc_counts.append(doc_counts)
        per_order_best.append(best)

    scores = []
    for i, tokens in enumerate(token_lists):
        if not tokens:
            scores.append(0.0)
            continue
        logs = []
        zero = False
        for n in range(1, min(4, len(tokens)) + 1):
            counts = per_order_doc_counts[n - 1][i]
            total = sum(counts.values())
            clipped = 0
            best = per_order_best[n - 1]
            for gram, count in counts.items():
                top, top_doc, second = best[gram]
                limit = second if top_doc == i else top
                clipped += min(count, limit)
            if clipped == 0:
                zero = True
                break
            logs.append(math.log(clipped / total))
        if zero:
            scores.append(0.0)
            continue
        c = len(tokens)
        others = np.delete(lengths, i)
        order = np.lexsort((others, np.abs(others - c)))
        r = int(others[order[0]])
        brevity = 1.0 if c >= r else math.exp(1 - r / c)
        scores.append(brevity * math.exp(sum(logs) / len(logs)))
    return float(np.mean(scores))


def correctness_proxy(dataset, model, encoder) -> float:
    """Fraction of dataset labels a proxy classifier agrees with."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    X = encoder.transform([ex.text for ex in dataset])
    preds = model.predict(X)
    labels = np.asarray([ex.label for ex in dataset])
    return float((preds == labels).mean())


@dataclass(frozen=True)
class QualityReport:
    n_examples: int
    per_class_sizes: dict[int, int]
    self_bleu: float | None
    weighted_jaccard: float | None
    correctness_proxy: float | None

    def as_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "per_class_sizes": {
                str(label): n for label, n in sorted(self.per_class_sizes.items())
            },
            "self_bleu": self.self_bleu,
            "weighted_jaccard": self.weighted_jaccard,
            "correctness_proxy": self.correctness_proxy,
        }


def build_report(
    dataset,
    corpus_counts: Mapping[str, int] | None = None,
    model=None,
    encoder=None,
    max_docs: int = 2000,
    seed: int = 0,
) -> QualityReport:
    """Assemble the quality metrics available for a dataset.

    Distribution similarity needs corpus unigram counts; the correctness
    proxy needs a classifier and an encoder. Metrics without their inputs
    are reported as None.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    sizes: dict[int, int] = {}
    for ex in dataset:
        sizes[ex.label] = sizes.get(ex.label, 0) + 1
    diversity = (
        self_bleu([ex.text for ex in dataset], max_docs=max_docs, seed=seed)
        if len(dataset) >= 2
        else None
    )
    similarity = (
        weighted_jaccard(text_counts([ex.text for ex in dataset]), corpus_counts)
        if corpus_counts is not None
        else None
    )
    agreement = (
        correctness_proxy(dataset, model, encoder)
        if model is not None and encoder is not None
        else None
    )
    return QualityReport(
        n_examples=len(dataset),
        per_class_sizes=sizes,
        self_bleu=diversity,
        weighted_jaccard=similarity,
        correctness_proxy=agreement,
    )
