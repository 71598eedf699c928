"""Task configuration: JSON loading, validation, seed derivation, hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .encoder import TrainConfig
from .index import GraphParams


class ConfigError(ValueError):
    """A task configuration file is malformed or inconsistent."""


def derive_seed(master: int, label: str) -> int:
    """Stable per-stage seed derived from a master seed and a stage label.

    Hash-based so adding a stage never shifts the seeds of existing ones.
    """
    digest = hashlib.sha256(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def config_hash(data: Mapping[str, Any]) -> str:
    """Hex digest of a JSON-serializable mapping, stable across key order."""
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TaskConfig:
    """Everything a run needs, as parsed from a JSON task file.

    ``raw`` keeps the original mapping so the run manifest can record the
    exact configuration hash.
    """

    specs: tuple  # of pipeline.ClassSpec
    pipeline: Any  # pipeline.PipelineConfig
    min_words: int = 10
    index_mode: str = "exact"
    index_params: GraphParams | None = None
    encoder_settings: dict = field(default_factory=dict)
    encoder_training: TrainConfig | None = None
    classifier_training: TrainConfig | None = None
    pretrain_pairs: int | None = None
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def _require(data: Mapping, key: str, kind, where: str):
    if key not in data:
        raise ConfigError(f"{where}: missing required key {key!r}")
    value = data[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: {key!r} must be a number")
        return float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ConfigError(f"{where}: {key!r} must be {kind.__name__}")
    return value


def _optional(data: Mapping, key: str, kind, default, where: str):
    if key not in data:
        return default
    return _require(data, key, kind, where)


_TRAIN_KEYS = {"learning_rate", "batch_size", "epochs", "seed"}
_ENCODER_KEYS = {"dim", "vocab_size", "temperature", "normalize", "max_tokens", "seed"}
_INDEX_KEYS = {"mode", "degree", "construction_beam", "query_beam"}


def _parse_training(data: Mapping, where: str) -> TrainConfig:
    unknown = set(data) - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    if "learning_rate" in data:
        kwargs["learning_rate"] = _require(data, "learning_rate", float, where)
    for key in ("batch_size", "epochs", "seed"):
        if key in data:
            kwargs[key] = _require(data, key, int, where)
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_index(data: Mapping, where: str) -> tuple[str, GraphParams | None]:
    unknown = set(data) - _INDEX_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    mode = _optional(data, "mode", str, "exact", where)
    if mode not in ("exact", "approx"):
        raise ConfigError(f"{where}: mode must be 'exact' or 'approx', got {mode!r}")
    graph_keys = {k: data[k] for k in ("degree", "construction_beam", "query_beam") if k in data}
    params = None
    if graph_keys:
        try:
            params = GraphParams(**{k: _require(data, k, int, where) for k in graph_keys})
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    return mode, params


def load_task(path: str | Path) -> TaskConfig:
    """Parse and validate a JSON task file into a :class:`TaskConfig`."""
    from .pipeline import ClassSpec, PipelineConfig  # local to avoid an import cycle

    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")

    where = str(path)
    classes = _require(data, "classes", list, where)
    if not classes:
        raise ConfigError(f"{where}: 'classes' must not be empty")
    specs = []
    for i, entry in enumerate(classes):
        cwhere = f"{where}: classes[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{cwhere}: must be an object")
        verbalizers = _require(entry, "verbalizers", list, cwhere)
        if not all(isinstance(v, str) for v in verbalizers):
            raise ConfigError(f"{cwhere}: verbalizers must be strings")
        try:
            specs.append(
                ClassSpec(
                    label=_require(entry, "label", int, cwhere),
                    name=_require(entry, "name", str, cwhere),
                    verbalizers=tuple(verbalizers),
                    template=_optional(entry, "template", str, "{VERB}", cwhere),
                )
            )
        except ValueError as exc:
            raise ConfigError(f"{cwhere}: {exc}") from exc

    rounds = _optional(data, "rounds", int, 3, where)
    k_schedule = _optional(data, "k_schedule", list, None, where)
    if k_schedule is None:
        k_schedule = [100] + [20] * max(rounds - 1, 0)
    if not all(isinstance(k, int) and not isinstance(k, bool) for k in k_schedule):
        raise ConfigError(f"{where}: k_schedule must be a list of integers")

    try:
        pipeline_cfg = PipelineConfig(
            rounds=rounds,
            k_schedule=tuple(k_schedule),
            per_class_cap=_optional(data, "per_class_cap", int, 3000, where),
            seed=_optional(data, "seed", int, 0, where),
            alpha=_optional(data, "alpha", float, 0.1, where),
            tau=_optional(data, "tau", float, 1.0, where),
            demos_per_class=_optional(data, "demos_per_class", int, 10, where),
            max_demo_tokens=_optional(data, "max_demo_tokens", int, 128, where),
            round1_filter=_optional(data, "round1_filter", bool, True, where),
            self_filter=_optional(data, "self_filter", bool, True, where),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc

    encoder_settings = _optional(data, "encoder", dict, {}, where)
    unknown = set(encoder_settings) - _ENCODER_KEYS
    if unknown:
        raise ConfigError(f"{where}: encoder: unknown key(s) {sorted(unknown)}")

    enc_training = data.get("encoder_training")
    cls_training = data.get("classifier_training")
    index_section = _optional(data, "index", dict, {}, where)
    index_mode, index_params = _parse_index(index_section, f"{where}: index")

    known = {
        "classes", "rounds", "k_schedule", "per_class_cap", "seed", "alpha", "tau",
        "demos_per_class", "max_demo_tokens", "round1_filter", "self_filter",
        "encoder", "encoder_training", "classifier_training", "index",
        "pretrain_pairs", "min_words",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown top-level key(s) {sorted(unknown)}")

    return TaskConfig(
        specs=tuple(specs),
        pipeline=pipeline_cfg,
        min_words=_optional(data, "min_words", int, 10, where),
        index_mode=index_mode,
        index_params=index_params,
        encoder_settings=dict(encoder_settings),
        encoder_training=_parse_training(enc_training, f"{where}: encoder_training")
        if enc_training is not None
        else None,
        classifier_training=_parse_training(cls_training, f"{where}: classifier_training")
        if cls_training is not None
        else None,
        pretrain_pairs=_optional(data, "pretrain_pairs", int, None, where),
        raw=data,
    )
