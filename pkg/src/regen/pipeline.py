"""Multi-round retrieve-filter-train loop that synthesizes a labeled dataset.

The entry point is :func:`run_regen`.  Round 1 retrieves with short
verbalizer queries and optionally filters against a nearest-centroid
model built from those same queries.  Every later round re-queries the
corpus with demonstration-augmented queries, filters the union with the
previous round's classifier, caps each class, and trains a fresh
classifier on the survivors.  The final dataset is the capped example
set of the last round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .classifier import LabeledExample, SoftmaxClassifier, few_shot_fuse, train_classifier
from .config import derive_seed
from .corpus import Corpus, sample_pairs
from .encoder import ContrastiveEncoder, TrainConfig
from .index import GraphParams, VectorIndex, build_index
from .vecio import EmbeddingRecord

logger = logging.getLogger(__name__)

SEPARATOR = " [SEP] "
VERBALIZER_SLOT = "{VERB}"
QUERY_ID_PREFIX = "query::"


@dataclass(frozen=True)
class ClassSpec:
    """One target class: its label id, a name, and how to phrase queries.

    ``verbalizers`` are short surface forms of the class (e.g. "sports",
    "athletics"); ``template`` wraps one of them into a retrieval query
    and must contain the ``{VERB}`` slot exactly once.
    """

    label: int
    name: str
    verbalizers: tuple[str, ...]
    template: str = VERBALIZER_SLOT

    def __post_init__(self):
        if self.label < 1:
            raise ValueError("class labels start at 1")
        object.__setattr__(self, "verbalizers", tuple(self.verbalizers))
        if not self.verbalizers or any(not v.strip() for v in self.verbalizers):
            raise ValueError("every class needs at least one non-blank verbalizer")
        if self.template.count(VERBALIZER_SLOT) != 1:
            raise ValueError(f"template must contain {VERBALIZER_SLOT} exactly once")


@dataclass(frozen=True)
class Query:
    """A retrieval query tied to one class and one round.

    Demonstration-augmented queries keep their components in ``parts``
    (template text, truncated demonstration) so encoders that look up
    precomputed vectors can combine per-part embeddings.
    """

    text: str
    class_label: int
    round: int
    demo_doc_id: str | None = None
    parts: tuple[str, str] | None = None


@dataclass(frozen=True)
class RetrievedExample:
    """A corpus document adopted into the synthetic dataset."""

    doc_id: str
    text: str
    label: int
    score: float
    round: int


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for the retrieval loop.

    ``k_schedule`` gives the per-query depth for each round and fixes the
    number of rounds together with ``rounds``; ``per_class_cap`` bounds
    every class after filtering.  ``round1_filter`` toggles the centroid
    filter in round 1, ``self_filter`` the classifier filter afterwards.
    """

    rounds: int = 3
    k_schedule: tuple[int, ...] = (100, 20, 20)
    per_class_cap: int = 3000
    seed: int = 0
    alpha: float = 0.1
    tau: float = 1.0
    demos_per_class: int = 10
    max_demo_tokens: int = 128
    round1_filter: bool = True
    self_filter: bool = True

    def __post_init__(self):
        object.__setattr__(self, "k_schedule", tuple(self.k_schedule))
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if len(self.k_schedule) != self.rounds:
            raise ValueError(
                f"k_schedule has {len(self.k_schedule)} entries for {self.rounds} rounds"
            )
        if any(k < 1 for k in self.k_schedule):
            raise ValueError("every k in the schedule must be positive")
        if self.per_class_cap < 1:
            raise ValueError("per_class_cap must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.demos_per_class < 1:
            raise ValueError("demos_per_class must be positive")
        if self.max_demo_tokens < 1:
            raise ValueError("max_demo_tokens must be positive")


@dataclass(frozen=True)
class RoundReport:
    """Per-round bookkeeping: counts before/after each stage."""

    round: int
    k: int
    n_queries: int
    retrieved: dict[int, int]
    kept: dict[int, int]
    capped: dict[int, int]
    classifier_loss: tuple[float, ...]

    @property
    def keep_rate(self) -> dict[int, float]:
        return {
            label: self.kept[label] / self.retrieved[label]
            for label in self.retrieved
            if self.retrieved[label]
        }

    def as_dict(self) -> dict:
        return {
            "round": self.round,
            "k": self.k,
            "n_queries": self.n_queries,
            "retrieved": {str(k): v for k, v in self.retrieved.items()},
            "kept": {str(k): v for k, v in self.kept.items()},
            "capped": {str(k): v for k, v in self.capped.items()},
            "keep_rate": {str(k): v for k, v in self.keep_rate.items()},
            "classifier_loss": list(self.classifier_loss),
        }


@dataclass(frozen=True)
class RunResult:
    """Everything a finished run produced.

    ``round_datasets`` holds each round's capped example pool; the last
    entry is ``dataset``.
    """

    dataset: list[RetrievedExample]
    classifier: SoftmaxClassifier
    encoder: object
    index: VectorIndex
    rounds: list[RoundReport] = field(default_factory=list)
    round_datasets: list[list[RetrievedExample]] = field(default_factory=list)


# -- query construction -------------------------------------------------------


def build_query(spec: ClassSpec, verbalizer: str) -> Query:
    """Round-1 query: the class template with one verbalizer filled in."""
    if verbalizer not in spec.verbalizers:
        raise ValueError(f"{verbalizer!r} is not a verbalizer of class {spec.label}")
    return Query(
        text=spec.template.replace(VERBALIZER_SLOT, verbalizer),
        class_label=spec.label,
        round=1,
    )


def augment_query(
    spec: ClassSpec, verbalizer: str, demo: RetrievedExample, round: int, max_demo_tokens: int = 128
) -> Query:
    """Later-round query: template text plus a truncated demonstration."""
    if round < 2:
        raise ValueError("augmented queries are for rounds after the first")
    if demo.label != spec.label:
        raise ValueError(
            f"demonstration labeled {demo.label} cannot augment class {spec.label}"
        )
    prefix = spec.template.replace(VERBALIZER_SLOT, verbalizer)
    words = demo.text.split()
    truncated = " ".join(words[:max_demo_tokens])
    return Query(
        text=prefix + SEPARATOR + truncated,
        class_label=spec.label,
        round=round,
        demo_doc_id=demo.doc_id,
        parts=(prefix, truncated),
    )


def round1_query_ids(specs: Sequence[ClassSpec]) -> dict[str, str]:
    """Reserved embedding ids for round-1 queries, mapped to query text.

    Precomputed embedding files must carry these ids so lookup encoders
    can serve verbalizer queries without computing vectors themselves.
    """
    ids: dict[str, str] = {}
    for spec in specs:
        for i, verb in enumerate(spec.verbalizers):
            ids[f"{QUERY_ID_PREFIX}{spec.label}::{i}"] = build_query(spec, verb).text
    return ids


def embed_query(encoder, query: Query) -> np.ndarray:
    """Embed a query, preferring an encoder's query-specific path."""
    hook = getattr(encoder, "embed_query", None)
    if hook is not None:
        return hook(query)
    return encoder.embed(query.text)


# -- precomputed embeddings ----------------------------------------------------


class PrecomputedEncoder:
    """Serves embeddings by lookup instead of computing them from text.

    Built from embedding records that cover every corpus document (by id)
    and, when round-1 queries are needed, the reserved query ids from
    :func:`round1_query_ids`.  Augmented queries are embedded as the
    token-count-weighted mean of the query prefix vector and the
    demonstration document vector, matching what mean pooling over the
    concatenated text would give.
    """

    def __init__(
        self,
        records: Sequence[EmbeddingRecord],
        corpus: Corpus,
        query_texts: Mapping[str, str] | None = None,
    ):
        records = list(records)
        if not records:
            raise ValueError("no embedding records given")
        dims = {len(rec.vector) for rec in records}
        if len(dims) != 1:
            raise ValueError(f"embedding records mix dimensions {sorted(dims)}")
        self.dim = dims.pop()
        self._by_id = {rec.id: np.asarray(rec.vector, dtype=np.float64) for rec in records}
        if len(self._by_id) != len(records):
            raise ValueError("embedding records contain duplicate ids")

        missing = [doc.id for doc in corpus if doc.id not in self._by_id]
        if missing:
            raise ValueError(
                f"embeddings cover {len(corpus) - len(missing)} of {len(corpus)} corpus "
                f"documents; first missing id: {missing[0]!r}"
            )
        self._by_text: dict[str, np.ndarray] = {
            doc.text: self._by_id[doc.id] for doc in corpus
        }
        if query_texts:
            absent = sorted(qid for qid in query_texts if qid not in self._by_id)
            if absent:
                raise ValueError(
                    f"embeddings lack {len(absent)} reserved query ids; "
                    f"first missing: {absent[0]!r}"
                )
            for qid, text in query_texts.items():
                self._by_text[text] = self._by_id[qid]

    def embed(self, text: str) -> np.ndarray:
        try:
            return self._by_text[text].copy()
        except KeyError:
            raise ValueError(
                f"no stored embedding for text {text[:60]!r}"
            ) from None

    def embed_id(self, doc_id: str) -> np.ndarray:
        try:
            return self._by_id[doc_id].copy()
        except KeyError:
            raise ValueError(f"no stored embedding for id {doc_id!r}") from None

    def embed_query(self, query: Query) -> np.ndarray:
        if query.parts is None:
            return self.embed(query.text)
        prefix, demo_text = query.parts
        if query.demo_doc_id is None:
            raise ValueError("augmented query is missing its demonstration id")
        # Weights mirror mean pooling over the concatenated token sequence.
        w_prefix = max(len(prefix.split()), 1)
        w_demo = max(len(demo_text.split()), 1)
        combined = w_prefix * self.embed(prefix) + w_demo * self.embed_id(query.demo_doc_id)
        return combined / (w_prefix + w_demo)

    def transform(self, texts: Iterable[str]) -> np.ndarray:
        return np.stack([self.embed(t) for t in texts])


# -- per-stage operations ------------------------------------------------------


def retrieve_round(
    index: VectorIndex,
    encoder,
    queries: Sequence[Query],
    k: int,
    corpus: Corpus,
) -> dict[int, list[RetrievedExample]]:
    """Run every query, then resolve each hit document to one class.

    A document found by several queries of the same class keeps its best
    score.  A document claimed by several classes goes to the class that
    scored it highest (ties to the smaller label).  Each class list is
    ordered by descending score, then doc id.
    """
    queries = list(queries)
    if not queries:
        raise ValueError("no queries to run")
    if k < 1:
        raise ValueError("k must be positive")
    if len(index) == 0:
        raise ValueError("cannot retrieve from an empty index")
    rounds = {q.round for q in queries}
    if len(rounds) != 1:
        raise ValueError(f"queries span several rounds: {sorted(rounds)}")
    round_no = rounds.pop()

    vectors = [embed_query(encoder, q) for q in queries]
    hit_lists = index.batch_top_k(vectors, k)

    best: dict[str, tuple[float, int]] = {}
    for query, hits in zip(queries, hit_lists):
        for hit in hits:
            current = best.get(hit.doc_id)
            if (
                current is None
                or hit.score > current[0]
                or (hit.score == current[0] and query.class_label < current[1])
            ):
                best[hit.doc_id] = (hit.score, query.class_label)

    by_class: dict[int, list[RetrievedExample]] = {q.class_label: [] for q in queries}
    for doc_id, (score, label) in best.items():
        if doc_id not in corpus:
            raise ValueError(f"index returned id {doc_id!r} that is not in the corpus")
        doc = corpus.get(doc_id)
        by_class[label].append(
            RetrievedExample(doc_id=doc_id, text=doc.text, label=label, score=score, round=round_no)
        )
    for label in by_class:
        by_class[label].sort(key=lambda ex: (-ex.score, ex.doc_id))
    return by_class


def filter_self_consistency(
    examples: Sequence[RetrievedExample],
    classifier: SoftmaxClassifier,
    encoder,
) -> list[RetrievedExample]:
    """Keep only examples whose label the classifier reproduces."""
    examples = list(examples)
    if not examples:
        return []
    labels = [ex.label for ex in examples]
    if min(labels) < 1 or max(labels) > classifier.n_classes:
        raise ValueError(
            f"example labels span {min(labels)}..{max(labels)} but the "
            f"classifier knows {classifier.n_classes} classes"
        )
    features = encoder.transform([ex.text for ex in examples])
    predictions = classifier.predict(features)
    return [ex for ex, pred in zip(examples, predictions) if pred == ex.label]


def cap_and_dedup(
    examples: Mapping[int, Sequence[RetrievedExample]],
    cap: int,
    seed: int = 0,
) -> dict[int, list[RetrievedExample]]:
    """Collapse duplicate texts per class, then keep the top ``cap`` by score.

    Duplicate texts keep their best-scoring occurrence (ties to the
    smaller doc id).  ``seed`` is accepted for interface stability; the
    policy is deterministic and does not draw from it.
    """
    if cap < 1:
        raise ValueError("cap must be positive")
    capped: dict[int, list[RetrievedExample]] = {}
    for label, group in examples.items():
        best_by_text: dict[str, RetrievedExample] = {}
        for ex in group:
            cur = best_by_text.get(ex.text)
            if (
                cur is None
                or ex.score > cur.score
                or (ex.score == cur.score and ex.doc_id < cur.doc_id)
            ):
                best_by_text[ex.text] = ex
        ranked = sorted(best_by_text.values(), key=lambda ex: (-ex.score, ex.doc_id))
        capped[label] = ranked[:cap]
    return capped


def flatten_examples(
    by_class: Mapping[int, Sequence[RetrievedExample]]
) -> list[RetrievedExample]:
    """Concatenate class lists in ascending label order."""
    out: list[RetrievedExample] = []
    for label in sorted(by_class):
        out.extend(by_class[label])
    return out


# -- driver --------------------------------------------------------------------


def _check_classes_populated(
    by_class: Mapping[int, Sequence[RetrievedExample]],
    specs: Sequence[ClassSpec],
    stage: str,
    round_no: int,
):
    for spec in specs:
        if not by_class.get(spec.label):
            raise RuntimeError(
                f"class {spec.label} ({spec.name!r}) has no examples after "
                f"{stage} in round {round_no}; relax the configuration or "
                f"improve the verbalizers"
            )


def _centroid_model(
    specs: Sequence[ClassSpec], encoder, queries: Sequence[Query], alpha: float
) -> SoftmaxClassifier:
    """Nearest-centroid filter for round 1, one centroid per class.

    Centroids are the per-class means of the verbalizer query embeddings,
    installed as rows of a linear scorer so argmax picks the closest
    class by dot product.  Rows are unit-normalized: a document's norm
    scales every logit equally, so only centroid norms could bias the
    argmax, and classes with fewer or shorter verbalizers should not
    lose documents to that artifact.
    """
    by_label: dict[int, list[np.ndarray]] = {spec.label: [] for spec in specs}
    for query in queries:
        by_label[query.class_label].append(embed_query(encoder, query))
    centroids = np.stack(
        [np.mean(by_label[spec.label], axis=0) for spec in sorted(specs, key=lambda s: s.label)]
    )
    norms = np.linalg.norm(centroids, axis=1, keepdims=True)
    centroids = np.divide(centroids, norms, out=centroids.copy(), where=norms > 0)
    return SoftmaxClassifier.from_parameters(
        centroids, np.zeros(centroids.shape[0]), alpha=alpha
    )


def round1_model(specs: Sequence[ClassSpec], encoder, alpha: float = 0.1) -> SoftmaxClassifier:
    """The filter model used in round 1: nearest verbalizer centroid."""
    specs = sorted(specs, key=lambda s: s.label)
    queries = [build_query(spec, verb) for spec in specs for verb in spec.verbalizers]
    return _centroid_model(specs, encoder, queries, alpha)


def _demo_pool(
    capped: Mapping[int, Sequence[RetrievedExample]], label: int, n: int
) -> list[RetrievedExample]:
    return list(capped[label][:n])


def run_regen(
    corpus: Corpus,
    specs: Sequence[ClassSpec],
    config: PipelineConfig | None = None,
    *,
    encoder=None,
    embeddings: Sequence[EmbeddingRecord] | None = None,
    few_shot: Sequence[LabeledExample] | None = None,
    index_mode: str = "exact",
    index_params: GraphParams | None = None,
    encoder_settings: Mapping | None = None,
    encoder_config: TrainConfig | None = None,
    classifier_config: TrainConfig | None = None,
    pretrain_pairs: int | None = None,
) -> RunResult:
    """Synthesize a labeled dataset for ``specs`` out of ``corpus``.

    With no ``encoder`` and no ``embeddings``, a contrastive encoder is
    pretrained on sentence pairs from the corpus.  ``embeddings`` switches
    to precomputed-vector lookup; the records must cover all document ids
    plus the reserved query ids from :func:`round1_query_ids`.  ``few_shot``
    examples, when given, refine the final classifier after the last round.
    All randomness is derived from ``config.seed``.
    """
    config = config or PipelineConfig()
    specs = sorted(specs, key=lambda s: s.label)
    labels = [spec.label for spec in specs]
    if len(specs) < 2:
        raise ValueError("need at least two classes")
    if labels != list(range(1, len(specs) + 1)):
        raise ValueError(f"class labels must be exactly 1..{len(specs)}, got {labels}")
    if encoder is not None and embeddings is not None:
        raise ValueError("pass either an encoder or precomputed embeddings, not both")
    n_classes = len(specs)

    # Stage 0: an embedding space and a search index over the corpus.
    if embeddings is not None:
        enc = PrecomputedEncoder(embeddings, corpus, round1_query_ids(specs))
        records = [
            EmbeddingRecord(doc.id, np.asarray(enc.embed_id(doc.id), dtype=np.float32))
            for doc in corpus
        ]
    else:
        if encoder is None:
            n_pairs = pretrain_pairs if pretrain_pairs is not None else min(
                20000, max(2, 5 * len(corpus))
            )
            pairs = sample_pairs(corpus, n_pairs, seed=derive_seed(config.seed, "pairs"))
            settings = dict(encoder_settings or {})
            settings.setdefault("seed", derive_seed(config.seed, "encoder-init"))
            settings.setdefault("temperature", config.tau)
            # Unit vectors make retrieval rank by angle; without this,
            # per-class norm disparities dominate the inner products.
            settings.setdefault("normalize", True)
            enc = ContrastiveEncoder(**settings)
            fit_cfg = encoder_config or TrainConfig(
                learning_rate=0.3, epochs=10, seed=derive_seed(config.seed, "encoder")
            )
            enc.fit(pairs, config=fit_cfg, vocab_texts=[doc.text for doc in corpus])
            logger.info("pretrained encoder on %d pairs", len(pairs))
        else:
            enc = encoder
        records = [
            EmbeddingRecord(doc.id, enc.embed(doc.text).astype(np.float32)) for doc in corpus
        ]
    index = build_index(records, mode=index_mode, params=index_params)
    logger.info("indexed %d documents (%s mode)", len(index), index_mode)

    base_cls_cfg = classifier_config or TrainConfig(
        learning_rate=0.1, batch_size=32, epochs=20
    )

    round1_queries = [
        build_query(spec, verb) for spec in specs for verb in spec.verbalizers
    ]
    previous_model: SoftmaxClassifier | None = None
    if config.round1_filter:
        previous_model = _centroid_model(specs, enc, round1_queries, config.alpha)

    reports: list[RoundReport] = []
    round_datasets: list[list[RetrievedExample]] = []
    capped: dict[int, list[RetrievedExample]] = {}
    model: SoftmaxClassifier | None = None

    for round_no in range(1, config.rounds + 1):
        k = config.k_schedule[round_no - 1]
        if round_no == 1:
            queries = round1_queries
        else:
            queries = []
            for spec in specs:
                demos = _demo_pool(capped, spec.label, config.demos_per_class)
                # First verbalizer anchors augmented queries; demos vary instead.
                for demo in demos:
                    queries.append(
                        augment_query(
                            spec,
                            spec.verbalizers[0],
                            demo,
                            round=round_no,
                            max_demo_tokens=config.max_demo_tokens,
                        )
                    )

        by_class = retrieve_round(index, enc, queries, k, corpus)
        _check_classes_populated(by_class, specs, "retrieval", round_no)
        retrieved_counts = {label: len(by_class[label]) for label in sorted(by_class)}

        apply_filter = config.round1_filter if round_no == 1 else config.self_filter
        if apply_filter and previous_model is not None:
            filtered_flat = filter_self_consistency(
                flatten_examples(by_class), previous_model, enc
            )
            by_class = {label: [] for label in by_class}
            for ex in filtered_flat:
                by_class[ex.label].append(ex)
            _check_classes_populated(by_class, specs, "filtering", round_no)
        kept_counts = {label: len(by_class[label]) for label in sorted(by_class)}

        capped = cap_and_dedup(by_class, config.per_class_cap, seed=config.seed)
        capped_counts = {label: len(capped[label]) for label in sorted(capped)}

        flat = flatten_examples(capped)
        round_datasets.append(flat)
        cls_cfg = replace(
            base_cls_cfg, seed=derive_seed(config.seed, f"classifier-round-{round_no}")
        )
        model = train_classifier(
            flat, enc, config=cls_cfg, alpha=config.alpha, n_classes=n_classes
        )
        previous_model = model

        reports.append(
            RoundReport(
                round=round_no,
                k=k,
                n_queries=len(queries),
                retrieved=retrieved_counts,
                kept=kept_counts,
                capped=capped_counts,
                classifier_loss=tuple(model.loss_history_),
            )
        )
        logger.info(
            "round %d: %d queries, retrieved %s, kept %s, capped %s",
            round_no,
            len(queries),
            retrieved_counts,
            kept_counts,
            capped_counts,
        )

    dataset = round_datasets[-1]
    assert model is not None
    if few_shot:
        fuse_cfg = replace(base_cls_cfg, seed=derive_seed(config.seed, "few-shot"))
        model = few_shot_fuse(
            list(few_shot),
            dataset,
            enc,
            config=fuse_cfg,
            alpha=config.alpha,
            n_classes=n_classes,
        )
    return RunResult(
        dataset=dataset,
        classifier=model,
        encoder=enc,
        index=index,
        rounds=reports,
        round_datasets=round_datasets,
    )
