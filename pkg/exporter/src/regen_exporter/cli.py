"""Command line front end: embed id/text JSONL files into one binary file."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .encoders import ModelLoadError
from .export import ExportJob, export_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regen-export",
        description=(
            "Embed every id/text row of the given JSONL files and write one "
            "binary embedding file, corpus order preserved."
        ),
    )
    parser.add_argument(
        "--corpus",
        action="append",
        required=True,
        metavar="PATH",
        help="corpus JSONL file; repeatable",
    )
    parser.add_argument(
        "--queries",
        action="append",
        default=[],
        metavar="PATH",
        help=(
            "extra id/text JSONL embedded after the corpus, e.g. dumped "
            "retrieval queries; repeatable"
        ),
    )
    parser.add_argument(
        "--model",
        default="hashing",
        help=(
            "'hashing' for the built-in offline encoder, otherwise a "
            "sentence-transformers model name (default: hashing)"
        ),
    )
    parser.add_argument("--out", required=True, help="output embedding file")
    parser.add_argument(
        "--pool",
        choices=("cls", "mean"),
        default=None,
        help=(
            "sentence pooling; defaults to cls for pretrained models and "
            "mean for the hashing model"
        ),
    )
    parser.add_argument(
        "--batch", type=int, default=64, help="inference batch size (default 64)"
    )
    parser.add_argument(
        "--dim", type=int, default=256, help="hashing model width (default 256)"
    )
    parser.add_argument(
        "--seed", type=int, default=0, help="hashing model seed (default 0)"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            corpus=tuple(Path(p) for p in args.corpus),
            out=Path(args.out),
            model=args.model,
            pool=args.pool,
            batch_size=args.batch,
            queries=tuple(Path(p) for p in args.queries),
            dim=args.dim,
            seed=args.seed,
        )
        summary = export_embeddings(job)
    except (OSError, ValueError, ModelLoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        json.dumps(
            {
                "command": "export",
                "model": args.model,
                "records": summary.records,
                "dim": summary.dim,
                "out": str(summary.out),
            },
            sort_keys=True,
        )
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
