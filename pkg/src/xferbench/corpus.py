"""Dataset loading, validation, truncation and splitting for the three NLI corpus families.

Three schema families are supported: FigLang-style (explanations + figurative
types), eSNLI-style (explanations only) and IMPLI-style (labels only). All
values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

ENTAILMENT = "Entailment"
CONTRADICTION = "Contradiction"
DEFAULT_LABELS = (ENTAILMENT, CONTRADICTION)

FIG_TYPES = ("Metaphor", "Simile", "Idiom", "CreativeParaphrase", "Sarcasm")


class CorpusError(ValueError):
    """Base class for dataset validation failures."""


class MissingField(CorpusError):
    pass


class UnknownLabel(CorpusError):
    pass


class UnknownFigType(CorpusError):
    pass


class EmptyFile(CorpusError):
    pass


class DegenerateSplit(CorpusError):
    pass


class SchemaMismatch(CorpusError):
    pass


@dataclass(frozen=True)
class DatasetSchema:
    """Declares which fields a dataset family carries and its label vocabulary.

    ``label_map`` translates raw on-disk labels to canonical ones (e.g. IMPLI's
    "non-entailment" -> "Contradiction") before vocabulary validation; the
    mapping is explicit so no label is rewritten silently.
    """

    name: str
    has_explanations: bool
    has_fig_types: bool
    label_vocabulary: tuple[str, ...] = DEFAULT_LABELS
    label_map: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.label_vocabulary:
            raise ValueError("label_vocabulary must be non-empty")


def figlang_schema() -> DatasetSchema:
    return DatasetSchema(name="figlang", has_explanations=True, has_fig_types=True)


def esnli_schema() -> DatasetSchema:
    return DatasetSchema(name="esnli", has_explanations=True, has_fig_types=False)


def impli_schema() -> DatasetSchema:
    return DatasetSchema(
        name="impli",
        has_explanations=False,
        has_fig_types=False,
        label_map={"entailment": ENTAILMENT, "non-entailment": CONTRADICTION},
    )


SCHEMAS = {
    "figlang": figlang_schema,
    "esnli": esnli_schema,
    "impli": impli_schema,
}


@dataclass(frozen=True)
class NLIExample:
    """One premise/hypothesis pair with gold label and optional annotations."""

    premise: str
    hypothesis: str
    label: str
    explanation: str | None = None
    fig_type: str | None = None
    source_dataset: str = ""


@dataclass(frozen=True)
class Dataset:
    """An ordered, immutable collection of examples conforming to one schema."""

    examples: tuple[NLIExample, ...]
    schema: DatasetSchema

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[NLIExample]:
        return iter(self.examples)

    def __getitem__(self, i: int) -> NLIExample:
        return self.examples[i]

    @classmethod
    def from_examples(cls, examples, schema: DatasetSchema) -> "Dataset":
        """Build a dataset from already-constructed examples, re-validating each."""
        validated = tuple(
            _validate_example(
                {
                    "premise": e.premise,
                    "hypothesis": e.hypothesis,
                    "label": e.label,
                    "explanation": e.explanation,
                    "fig_type": e.fig_type,
                },
                schema,
                where=f"example {i}",
            )
            for i, e in enumerate(examples)
        )
        return cls(examples=validated, schema=schema)


def _clean(value) -> str | None:
    if value is None:
        return None
    if not isinstance(value, str):
        raise MissingField(f"expected string, got {type(value).__name__}")
    stripped = value.strip()
    return stripped or None


def _validate_example(record: Mapping, schema: DatasetSchema, where: str) -> NLIExample:
    premise = _clean(record.get("premise"))
    hypothesis = _clean(record.get("hypothesis"))
    if premise is None:
        raise MissingField(f"{where}: missing or empty 'premise'")
    if hypothesis is None:
        raise MissingField(f"{where}: missing or empty 'hypothesis'")

    raw_label = _clean(record.get("label"))
    if raw_label is None:
        raise MissingField(f"{where}: missing or empty 'label'")
    label = schema.label_map.get(raw_label, raw_label)
    if label not in schema.label_vocabulary:
        raise UnknownLabel(
            f"{where}: label {raw_label!r} not in vocabulary {list(schema.label_vocabulary)}"
        )

    explanation = None
    if schema.has_explanations:
        explanation = _clean(record.get("explanation"))
        if explanation is None:
            raise MissingField(f"{where}: schema {schema.name!r} requires an explanation")

    fig_type = None
    if schema.has_fig_types:
        fig_type = _clean(record.get("fig_type"))
        if fig_type is None:
            raise MissingField(f"{where}: schema {schema.name!r} requires a fig_type")
        if fig_type not in FIG_TYPES:
            raise UnknownFigType(f"{where}: fig_type {fig_type!r} not in {list(FIG_TYPES)}")

    return NLIExample(
        premise=premise,
        hypothesis=hypothesis,
        label=label,
        explanation=explanation,
        fig_type=fig_type,
        source_dataset=schema.name,
    )


def load_dataset(path: str | Path, schema: DatasetSchema) -> Dataset:
    """Load and validate a JSONL dataset, preserving file order.

    Fields outside the schema (e.g. an explanation in an IMPLI file) are
    ignored. Blank lines are skipped.
    """
    path = Path(path)
    examples = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{line_no}: invalid JSON: {e}") from e
            examples.append(_validate_example(record, schema, where=f"{path}:{line_no}"))
    if not examples:
        raise EmptyFile(f"{path}: no records")
    return Dataset(examples=tuple(examples), schema=schema)


def serialize_record(example: NLIExample) -> str:
    """One JSONL line, keys in wire order, no extra whitespace."""
    record: dict[str, str] = {
        "premise": example.premise,
        "hypothesis": example.hypothesis,
        "label": example.label,
    }
    if example.explanation is not None:
        record["explanation"] = example.explanation
    if example.fig_type is not None:
        record["fig_type"] = example.fig_type
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset back to JSONL; byte-stable for fixed input."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for example in dataset:
            f.write(serialize_record(example))
            f.write("\n")


def truncate(dataset: Dataset, target_size: int, mode: str = "prefix", seed: int = 0) -> Dataset:
    """Reduce a dataset to at most ``target_size`` examples.

    ``mode="prefix"`` (default) keeps the leading examples; ``mode="sample"``
    keeps a seeded uniform sample, preserving original order. Both are
    deterministic and idempotent.
    """
    if target_size < 0:
        raise ValueError(f"target_size must be >= 0, got {target_size}")
    if mode not in ("prefix", "sample"):
        raise ValueError(f"unknown truncate mode {mode!r}")
    n = len(dataset)
    if target_size >= n:
        return dataset
    if mode == "prefix":
        kept = dataset.examples[:target_size]
    else:
        rng = random.Random(seed)
        idx = sorted(rng.sample(range(n), target_size))
        kept = tuple(dataset.examples[i] for i in idx)
    return Dataset(examples=kept, schema=dataset.schema)


def split_dev(dataset: Dataset, dev_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Partition into (train, dev) with |dev| = round(dev_fraction * |d|).

    Selection is uniform without stratification and deterministic for a fixed
    seed; order within each part follows the input.
    """
    if not 0.0 <= dev_fraction < 1.0:
        raise ValueError(f"dev_fraction must be in [0, 1), got {dev_fraction}")
    n = len(dataset)
    if dev_fraction == 0.0:
        return dataset, Dataset(examples=(), schema=dataset.schema)
    if n < 2:
        raise DegenerateSplit(f"need at least 2 examples to split, got {n}")
    n_dev = round(dev_fraction * n)
    if n_dev == 0 or n_dev == n:
        raise DegenerateSplit(
            f"dev_fraction={dev_fraction} over {n} examples leaves an empty partition"
        )
    rng = random.Random(seed)
    dev_idx = set(rng.sample(range(n), n_dev))
    train = tuple(e for i, e in enumerate(dataset.examples) if i not in dev_idx)
    dev = tuple(e for i, e in enumerate(dataset.examples) if i in dev_idx)
    return (
        Dataset(examples=train, schema=dataset.schema),
        Dataset(examples=dev, schema=dataset.schema),
    )


def group_by_fig_type(dataset: Dataset) -> dict[str, Dataset]:
    """Partition by figurative type, keeping order within groups."""
    if not dataset.schema.has_fig_types:
        raise SchemaMismatch(
            f"schema {dataset.schema.name!r} carries no figurative-type annotations"
        )
    groups: dict[str, list[NLIExample]] = {}
    for example in dataset:
        groups.setdefault(example.fig_type, []).append(example)
    return {
        fig_type: Dataset(examples=tuple(members), schema=dataset.schema)
        for fig_type, members in groups.items()
    }
