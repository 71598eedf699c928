"""Synthetic clustered corpora with known class structure.

Each class owns a disjoint topic vocabulary. Distractor documents draw
from a separate filler vocabulary and belong to no class. A configurable
fraction of topical documents are "confusable": they mix a minority of
another class's words into their text, which makes retrieval plant
label noise without any hand-placed errors.
"""

from dataclasses import dataclass

import numpy as np

from regen.classifier import LabeledExample
from regen.corpus import Corpus, Document
from regen.pipeline import ClassSpec


@dataclass(frozen=True)
class Benchmark:
    corpus: Corpus
    specs: list[ClassSpec]
    truth: dict[str, int]          # doc id -> class label; distractors absent
    confused: set[str]             # ids of mixed-vocabulary documents
    held_out: list[LabeledExample]


def class_vocab(c: int, words_per_class: int) -> list[str]:
    return [f"topic{c}word{i:02d}" for i in range(words_per_class)]


def _compose_doc(rng, pools, weights, n_sentences=(2, 4), words=(6, 9)) -> str:
    sentences = []
    for _ in range(rng.integers(n_sentences[0], n_sentences[1] + 1)):
        length = int(rng.integers(words[0], words[1] + 1))
        chosen = []
        for _ in range(length):
            pool = pools[rng.choice(len(pools), p=weights)]
            chosen.append(pool[int(rng.integers(len(pool)))])
        sentences.append(" ".join(chosen) + ".")
    return " ".join(sentences)


def generate_benchmark(
    n_docs: int = 2000,
    n_classes: int = 4,
    distractor_frac: float = 0.2,
    confusion_frac: float = 0.0,
    words_per_class: int = 50,
    n_held_out: int = 200,
    held_out_confusion: float = 0.0,
    seed: int = 0,
) -> Benchmark:
    rng = np.random.default_rng(seed)
    vocabs = {c: class_vocab(c, words_per_class) for c in range(1, n_classes + 1)}
    filler = [f"fillerword{i:02d}" for i in range(100)]

    n_distractors = int(round(n_docs * distractor_frac))
    n_topical = n_docs - n_distractors
    labels = [1 + i % n_classes for i in range(n_topical)] + [0] * n_distractors
    rng.shuffle(labels)

    n_confused = int(round(n_topical * confusion_frac))
    topical_positions = [i for i, lbl in enumerate(labels) if lbl > 0]
    confused_positions = set(
        rng.choice(topical_positions, size=n_confused, replace=False).tolist()
    )

    documents = []
    truth = {}
    confused_ids = set()
    for i, label in enumerate(labels):
        doc_id = f"doc{i:05d}"
        if label == 0:
            text = _compose_doc(rng, [filler], [1.0])
        elif i in confused_positions:
            other = int(rng.choice([c for c in vocabs if c != label]))
            text = _compose_doc(rng, [vocabs[label], vocabs[other]], [0.6, 0.4])
            confused_ids.add(doc_id)
            truth[doc_id] = label
        else:
            text = _compose_doc(rng, [vocabs[label]], [1.0])
            truth[doc_id] = label
        documents.append(Document(id=doc_id, text=text))

    held_out = []
    for j in range(n_held_out):
        label = 1 + j % n_classes
        if rng.random() < held_out_confusion:
            other = int(rng.choice([c for c in vocabs if c != label]))
            text = _compose_doc(rng, [vocabs[label], vocabs[other]], [0.6, 0.4])
        else:
            text = _compose_doc(rng, [vocabs[label]], [1.0])
        held_out.append(LabeledExample(text, label))

    specs = [
        ClassSpec(
            label=c,
            name=f"topic{c}",
            verbalizers=tuple(vocabs[c][:3]),
            template="{VERB}",
        )
        for c in range(1, n_classes + 1)
    ]
    return Benchmark(
        corpus=Corpus(tuple(documents)),
        specs=specs,
        truth=truth,
        confused=confused_ids,
        held_out=held_out,
    )
