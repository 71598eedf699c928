"""Command-line interface.

Subcommands mirror the stages of the system: ``pretrain`` fits the
contrastive encoder, ``index`` builds a searchable vector index,
``curate`` runs the retrieval loop with an existing encoder or
precomputed embeddings, ``train``/``eval`` handle classifiers on labeled
JSONL files, ``metrics`` reports dataset quality, and ``pipeline`` runs
everything end to end.  Every command prints a one-line JSON summary on
success; errors go to stderr with exit code 1, usage problems exit 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .classifier import LabeledExample, SoftmaxClassifier, load_model
from .config import ConfigError, TaskConfig, load_task
from .corpus import load_corpus, sample_pairs
from .encoder import ContrastiveEncoder, TrainConfig, load_encoder
from .index import GraphParams, build_index
from .metrics import build_report, macro_f1, text_counts
from .pipeline import RunResult, round1_query_ids, run_regen
from .vecio import EmbeddingRecord, read_embeddings


def _json_line(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _load_labeled(path: str | Path) -> list[LabeledExample]:
    """Read a labeled JSONL file: one {"text", "label"} object per line."""
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}, line {n}: not valid JSON ({exc})") from exc
            if (
                not isinstance(row, dict)
                or not isinstance(row.get("text"), str)
                or not isinstance(row.get("label"), int)
                or isinstance(row.get("label"), bool)
            ):
                raise ValueError(
                    f"{path}, line {n}: expected an object with string 'text' "
                    f"and integer 'label'"
                )
            examples.append(LabeledExample(row["text"], row["label"]))
    if not examples:
        raise ValueError(f"{path}: no labeled examples")
    return examples


def _load_labeled_rows(path: str | Path) -> list[dict]:
    """Like :func:`_load_labeled` but keeps full rows (for id lookups)."""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            if not isinstance(row, dict) or not isinstance(row.get("label"), int):
                raise ValueError(f"{path}, line {n}: expected an object with 'label'")
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no labeled examples")
    return rows


def _write_dataset(path: Path, dataset) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in dataset:
            f.write(
                json.dumps(
                    {
                        "id": ex.doc_id,
                        "text": ex.text,
                        "label": ex.label,
                        "score": ex.score,
                        "round": ex.round,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def _features(rows: list[dict], encoder, embeddings_path: str | None) -> np.ndarray:
    """Embed labeled rows, by text through an encoder or by id lookup."""
    if encoder is not None:
        return encoder.transform([row["text"] for row in rows])
    records = {rec.id: rec.vector for rec in read_embeddings(embeddings_path)}
    vectors = []
    for row in rows:
        doc_id = row.get("id")
        if not isinstance(doc_id, str) or doc_id not in records:
            raise ValueError(
                f"row id {doc_id!r} has no vector in {embeddings_path}; "
                f"id-based lookup needs every row's 'id' present there"
            )
        vectors.append(np.asarray(records[doc_id], dtype=np.float64))
    return np.stack(vectors)


def _train_config_from_args(args, default: TrainConfig) -> TrainConfig:
    updates = {}
    if args.learning_rate is not None:
        updates["learning_rate"] = args.learning_rate
    if args.batch_size is not None:
        updates["batch_size"] = args.batch_size
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    if args.seed is not None:
        updates["seed"] = args.seed
    return dataclasses.replace(default, **updates)


# -- subcommands ----------------------------------------------------------------


def _cmd_pretrain(args) -> int:
    corpus = load_corpus(args.corpus, min_words=args.min_words)
    n_pairs = args.pairs if args.pairs is not None else min(20000, max(2, 5 * len(corpus)))
    pairs = sample_pairs(corpus, n_pairs, seed=args.seed if args.seed is not None else 0)
    encoder = ContrastiveEncoder(
        dim=args.dim,
        vocab_size=args.vocab_size,
        temperature=args.temperature,
        normalize=not args.no_normalize,
        max_tokens=args.max_tokens,
        seed=args.seed if args.seed is not None else 0,
    )
    config = _train_config_from_args(
        args, TrainConfig(learning_rate=0.3, epochs=10, seed=0)
    )
    encoder.fit(pairs, config=config, vocab_texts=[doc.text for doc in corpus])
    encoder.save(args.out)
    _json_line(
        {
            "command": "pretrain",
            "documents": len(corpus),
            "pairs": len(pairs),
            "loss_first": encoder.loss_history_[0] if encoder.loss_history_ else None,
            "loss_last": encoder.loss_history_[-1] if encoder.loss_history_ else None,
            "out": str(args.out),
        }
    )
    return 0


def _index_params_from_args(args) -> GraphParams | None:
    if args.degree is None and args.construction_beam is None and args.query_beam is None:
        return None
    defaults = GraphParams()
    return GraphParams(
        degree=args.degree if args.degree is not None else defaults.degree,
        construction_beam=args.construction_beam
        if args.construction_beam is not None
        else defaults.construction_beam,
        query_beam=args.query_beam if args.query_beam is not None else defaults.query_beam,
    )


def _cmd_index(args) -> int:
    if args.embeddings:
        records = read_embeddings(args.embeddings)
    else:
        if not args.corpus or not args.encoder:
            raise ValueError("index needs either --embeddings or both --corpus and --encoder")
        corpus = load_corpus(args.corpus, min_words=args.min_words)
        encoder = load_encoder(args.encoder)
        records = [
            EmbeddingRecord(doc.id, encoder.embed(doc.text).astype(np.float32))
            for doc in corpus
        ]
    mode = "approx" if args.approx else "exact"
    index = build_index(records, mode=mode, params=_index_params_from_args(args))
    index.save(args.out)
    _json_line(
        {
            "command": "index",
            "n": len(index),
            "dim": index.dim,
            "mode": mode,
            "out": str(args.out),
        }
    )
    return 0


def _dump_queries(task: TaskConfig, path: str) -> int:
    with open(path, "w", encoding="utf-8") as f:
        for qid, text in round1_query_ids(task.specs).items():
            f.write(json.dumps({"id": qid, "text": text}, ensure_ascii=False) + "\n")
    _json_line(
        {
            "command": "dump-queries",
            "n": len(round1_query_ids(task.specs)),
            "out": path,
        }
    )
    return 0


def _run_loop(args, *, allow_pretrain: bool, command: str) -> int:
    task = load_task(args.config)
    if args.dump_queries:
        return _dump_queries(task, args.dump_queries)

    pipeline_cfg = task.pipeline
    if args.seed is not None:
        pipeline_cfg = dataclasses.replace(pipeline_cfg, seed=args.seed)
    if args.no_round1_filter:
        pipeline_cfg = dataclasses.replace(pipeline_cfg, round1_filter=False)
    if args.no_filter:
        pipeline_cfg = dataclasses.replace(pipeline_cfg, self_filter=False)
    index_mode = task.index_mode
    if args.exact:
        index_mode = "exact"
    elif args.approx:
        index_mode = "approx"

    corpus = load_corpus(args.corpus, min_words=task.min_words)
    encoder = None
    embeddings = None
    if args.embeddings:
        embeddings = read_embeddings(args.embeddings)
    elif args.encoder:
        encoder = load_encoder(args.encoder)
    elif not allow_pretrain:
        raise ValueError(
            "curate needs --encoder or --embeddings; run pretrain first, "
            "or use the pipeline command to train one on the fly"
        )
    few_shot = _load_labeled(args.few_shot) if args.few_shot else None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    result: RunResult = run_regen(
        corpus,
        list(task.specs),
        pipeline_cfg,
        encoder=encoder,
        embeddings=embeddings,
        few_shot=few_shot,
        index_mode=index_mode,
        index_params=task.index_params,
        encoder_settings=task.encoder_settings,
        encoder_config=task.encoder_training,
        classifier_config=task.classifier_training,
        pretrain_pairs=task.pretrain_pairs,
    )
    elapsed = time.perf_counter() - started

    artifacts = {"dataset": "dataset.jsonl", "classifier": "classifier.rcls",
                 "index": "index.rgen", "manifest": "manifest.json"}
    _write_dataset(out / artifacts["dataset"], result.dataset)
    result.classifier.save(out / artifacts["classifier"])
    result.index.save(out / artifacts["index"])
    if isinstance(result.encoder, ContrastiveEncoder):
        artifacts["encoder"] = "encoder.renc"
        result.encoder.save(out / artifacts["encoder"])

    per_class: dict[str, int] = {}
    for ex in result.dataset:
        per_class[str(ex.label)] = per_class.get(str(ex.label), 0) + 1
    manifest = {
        "command": command,
        "config": str(args.config),
        "config_hash": task.hash,
        "seed": pipeline_cfg.seed,
        "index_mode": index_mode,
        "filters": {
            "round1": pipeline_cfg.round1_filter,
            "self": pipeline_cfg.self_filter,
        },
        "few_shot": len(few_shot) if few_shot else 0,
        "corpus_documents": len(corpus),
        "dataset": {"n_examples": len(result.dataset), "per_class": per_class},
        "rounds": [report.as_dict() for report in result.rounds],
        "artifacts": artifacts,
        "timings": {"total_s": round(elapsed, 3)},
    }
    with open(out / artifacts["manifest"], "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")

    _json_line(
        {
            "command": command,
            "config_hash": task.hash,
            "n_examples": len(result.dataset),
            "per_class": per_class,
            "rounds": len(result.rounds),
            "out": str(out),
        }
    )
    return 0


def _cmd_curate(args) -> int:
    return _run_loop(args, allow_pretrain=False, command="curate")


def _cmd_pipeline(args) -> int:
    return _run_loop(args, allow_pretrain=True, command="pipeline")


def _cmd_train(args) -> int:
    rows = _load_labeled_rows(args.data)
    encoder = load_encoder(args.encoder) if args.encoder else None
    if encoder is None and not args.embeddings:
        raise ValueError("train needs --encoder or --embeddings")
    if encoder is not None and any(not isinstance(r.get("text"), str) for r in rows):
        raise ValueError("every row needs a 'text' field for encoder features")
    X = _features(rows, encoder, args.embeddings)
    y = np.asarray([row["label"] for row in rows])
    n_classes = args.classes if args.classes is not None else int(y.max())
    config = _train_config_from_args(
        args, TrainConfig(learning_rate=0.1, batch_size=32, epochs=20)
    )
    clf = SoftmaxClassifier(
        n_classes=n_classes,
        alpha=args.alpha,
        hidden=args.hidden,
        seed=config.seed,
    )
    clf.fit(X, y, config=config)
    clf.save(args.out)
    _json_line(
        {
            "command": "train",
            "n_examples": len(rows),
            "n_classes": n_classes,
            "loss_last": clf.loss_history_[-1] if clf.loss_history_ else None,
            "out": str(args.out),
        }
    )
    return 0


def _cmd_eval(args) -> int:
    rows = _load_labeled_rows(args.data)
    encoder = load_encoder(args.encoder) if args.encoder else None
    if encoder is None and not args.embeddings:
        raise ValueError("eval needs --encoder or --embeddings")
    model = load_model(args.model)
    X = _features(rows, encoder, args.embeddings)
    golds = [row["label"] for row in rows]
    preds = model.predict(X).tolist()
    summary = {
        "command": "eval",
        "n": len(rows),
        "accuracy": float(np.mean(np.asarray(preds) == np.asarray(golds))),
        "macro_f1": macro_f1(preds, golds, n_classes=model.n_classes),
    }
    _json_line(summary)
    return 0


def _cmd_metrics(args) -> int:
    rows = _load_labeled_rows(args.data)
    if any(not isinstance(row.get("text"), str) for row in rows):
        raise ValueError(f"{args.data}: every row needs a 'text' field")
    dataset = [LabeledExample(row["text"], row["label"]) for row in rows]
    corpus_counts = None
    if args.corpus:
        corpus = load_corpus(args.corpus, min_words=args.min_words)
        corpus_counts = text_counts([doc.text for doc in corpus])
    model = load_model(args.model) if args.model else None
    encoder = load_encoder(args.encoder) if args.encoder else None
    report = build_report(
        dataset,
        corpus_counts=corpus_counts,
        model=model,
        encoder=encoder,
        max_docs=args.max_docs,
        seed=args.seed if args.seed is not None else 0,
    )
    payload = {"command": "metrics"}
    payload.update(report.as_dict())
    _json_line(payload)
    return 0


# -- parser ----------------------------------------------------------------------


def _add_training_flags(sub):
    sub.add_argument("--learning-rate", type=float, default=None)
    sub.add_argument("--batch-size", type=int, default=None)
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--seed", type=int, default=None)


def _add_loop_flags(sub):
    sub.add_argument("--config", required=True, help="task configuration JSON")
    sub.add_argument("--corpus", required=True, nargs="+", help="corpus JSONL shard(s)")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--encoder", help="saved encoder file")
    sub.add_argument("--embeddings", help="precomputed embeddings (RGEN file)")
    sub.add_argument("--few-shot", help="labeled JSONL to refine the final classifier")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    mode = sub.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", help="force exact search")
    mode.add_argument("--approx", action="store_true", help="force graph search")
    sub.add_argument(
        "--no-round1-filter", action="store_true", help="skip the first-round filter"
    )
    sub.add_argument(
        "--no-filter", action="store_true", help="skip filtering in later rounds"
    )
    sub.add_argument(
        "--dump-queries",
        metavar="PATH",
        help="write the reserved query ids and texts as JSONL, then exit; "
        "an external embedder must cover these ids plus all document ids",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regen",
        description="Synthesize labeled text-classification datasets by "
        "retrieving from an unlabeled corpus.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    pretrain = commands.add_parser("pretrain", help="fit the contrastive encoder")
    pretrain.add_argument("--corpus", required=True, nargs="+")
    pretrain.add_argument("--out", required=True)
    pretrain.add_argument("--pairs", type=int, default=None)
    pretrain.add_argument("--dim", type=int, default=64)
    pretrain.add_argument("--vocab-size", type=int, default=32768)
    pretrain.add_argument("--max-tokens", type=int, default=256)
    pretrain.add_argument("--temperature", type=float, default=1.0)
    pretrain.add_argument("--no-normalize", action="store_true")
    pretrain.add_argument("--min-words", type=int, default=10)
    _add_training_flags(pretrain)
    pretrain.set_defaults(func=_cmd_pretrain)

    index = commands.add_parser("index", help="build a vector index")
    index.add_argument("--corpus", nargs="+")
    index.add_argument("--encoder")
    index.add_argument("--embeddings")
    index.add_argument("--out", required=True)
    index.add_argument("--min-words", type=int, default=10)
    mode = index.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true")
    mode.add_argument("--approx", action="store_true")
    index.add_argument("--degree", type=int, default=None)
    index.add_argument("--construction-beam", type=int, default=None)
    index.add_argument("--query-beam", type=int, default=None)
    index.set_defaults(func=_cmd_index)

    curate = commands.add_parser(
        "curate", help="run the retrieval loop with an existing encoder"
    )
    _add_loop_flags(curate)
    curate.set_defaults(func=_cmd_curate)

    train = commands.add_parser("train", help="train a classifier on labeled JSONL")
    train.add_argument("--data", required=True)
    train.add_argument("--encoder")
    train.add_argument("--embeddings")
    train.add_argument("--out", required=True)
    train.add_argument("--alpha", type=float, default=0.1)
    train.add_argument("--classes", type=int, default=None)
    train.add_argument("--hidden", action="store_true")
    _add_training_flags(train)
    train.set_defaults(func=_cmd_train)

    evaluate = commands.add_parser("eval", help="evaluate a classifier on labeled JSONL")
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--encoder")
    evaluate.add_argument("--embeddings")
    evaluate.set_defaults(func=_cmd_eval)

    metrics = commands.add_parser("metrics", help="report dataset quality metrics")
    metrics.add_argument("--data", required=True)
    metrics.add_argument("--corpus", nargs="+")
    metrics.add_argument("--encoder")
    metrics.add_argument("--model")
    metrics.add_argument("--max-docs", type=int, default=2000)
    metrics.add_argument("--seed", type=int, default=None)
    metrics.add_argument("--min-words", type=int, default=10)
    metrics.set_defaults(func=_cmd_metrics)

    pipeline = commands.add_parser(
        "pipeline", help="pretrain if needed, then curate, in one run"
    )
    _add_loop_flags(pipeline)
    pipeline.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
