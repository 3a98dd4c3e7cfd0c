"""Task schemas, JSONL corpus ingestion, deterministic splits, and the
original/rephrased alignment guarantee.

A corpus is a JSONL file, one object per line, whose keys are exactly the
schema's field names plus "id". Labels are stored as class names from the
schema's label space. Serialization is canonical (sorted ids, sorted keys)
so equal datasets produce byte-identical files regardless of input order.

Split assignment is a pure function of (seed, sorted id list): permuting the
input file never moves an instance between splits.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

__all__ = [
    "DataError",
    "AlignmentError",
    "FieldSpec",
    "TaskSchema",
    "Instance",
    "Dataset",
    "FeatureExtractor",
    "ArraySplits",
    "load_jsonl",
    "save_jsonl",
    "load_split_file",
    "save_split_file",
    "split",
    "align_check",
    "featurize",
    "builtin_schemas",
]

ROLES = ("rewritable_span", "fixed_span", "label")
SPLIT_NAMES = ("train", "dev", "test")


class DataError(ValueError):
    pass


class AlignmentError(DataError):
    pass


@dataclass(frozen=True)
class FieldSpec:
    name: str
    role: str  # one of ROLES

    def __post_init__(self):
        if not self.name:
            raise DataError("field name must be nonempty")
        if self.role not in ROLES:
            raise DataError(f"unknown role {self.role!r}; expected one of {ROLES}")


@dataclass(frozen=True)
class TaskSchema:
    name: str
    fields: tuple[FieldSpec, ...]
    label_space: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "label_space", tuple(self.label_space))
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate field names in schema {self.name!r}")
        labels = [f for f in self.fields if f.role == "label"]
        if len(labels) != 1:
            raise DataError(f"schema {self.name!r} must have exactly one label field")
        if not any(f.role == "rewritable_span" for f in self.fields):
            raise DataError(f"schema {self.name!r} needs at least one rewritable_span")
        if len(self.label_space) < 2:
            raise DataError("label_space needs at least two classes")
        if len(set(self.label_space)) != len(self.label_space):
            raise DataError("label_space entries must be unique")

    @property
    def label_field(self) -> str:
        return next(f.name for f in self.fields if f.role == "label")

    @property
    def span_fields(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields if f.role != "label")

    @property
    def rewritable_fields(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields if f.role == "rewritable_span")

    def role_of(self, field_name: str) -> str:
        for f in self.fields:
            if f.name == field_name:
                return f.role
        raise DataError(f"schema {self.name!r} has no field {field_name!r}")


@dataclass(frozen=True)
class Instance:
    id: str
    field_values: Mapping[str, str]
    label: int  # index into the schema's label_space

    def __post_init__(self):
        object.__setattr__(self, "field_values", dict(self.field_values))

    def to_record(self, schema: TaskSchema) -> dict:
        rec = {"id": self.id}
        for name in schema.span_fields:
            rec[name] = self.field_values[name]
        rec[schema.label_field] = schema.label_space[self.label]
        return rec

    def with_field(self, field_name: str, text: str) -> "Instance":
        values = dict(self.field_values)
        values[field_name] = text
        return replace(self, field_values=values)


@dataclass(frozen=True)
class Dataset:
    schema: TaskSchema
    instances: tuple[Instance, ...]
    split_assignment: Mapping[str, str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate instance ids")
        for inst in self.instances:
            missing = set(self.schema.span_fields) - set(inst.field_values)
            if missing:
                raise DataError(f"instance {inst.id!r} missing fields {sorted(missing)}")
            if not 0 <= inst.label < len(self.schema.label_space):
                raise DataError(f"instance {inst.id!r} label index out of range")
        if self.split_assignment is not None:
            assignment = dict(self.split_assignment)
            if set(assignment) != set(ids):
                raise DataError("split assignment must cover exactly the instance ids")
            bad = {s for s in assignment.values() if s not in SPLIT_NAMES}
            if bad:
                raise DataError(f"unknown split names {sorted(bad)}")
            object.__setattr__(self, "split_assignment", assignment)

    def __len__(self) -> int:
        return len(self.instances)

    def by_id(self) -> dict[str, Instance]:
        return {inst.id: inst for inst in self.instances}

    def sorted_instances(self) -> list[Instance]:
        return sorted(self.instances, key=lambda inst: inst.id)

    def split_ids(self, split_name: str) -> list[str]:
        if self.split_assignment is None:
            raise DataError("dataset has no split assignment; call split() first")
        if split_name not in SPLIT_NAMES:
            raise DataError(f"unknown split {split_name!r}")
        return sorted(i for i, s in self.split_assignment.items() if s == split_name)

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(inst.to_record(self.schema), sort_keys=True, ensure_ascii=False)
            for inst in self.sorted_instances()
        ]
        return "".join(line + "\n" for line in lines)


def _parse_label(value, schema: TaskSchema, lineno: int) -> int:
    if isinstance(value, str):
        if value not in schema.label_space:
            raise DataError(
                f"line {lineno}: unknown label {value!r}; expected one of {list(schema.label_space)}"
            )
        return schema.label_space.index(value)
    if isinstance(value, int) and not isinstance(value, bool):
        if not 0 <= value < len(schema.label_space):
            raise DataError(f"line {lineno}: label index {value} out of range")
        return value
    raise DataError(f"line {lineno}: label must be a class name or index, got {value!r}")


def load_jsonl(path, schema: TaskSchema) -> Dataset:
    """Parse a JSONL corpus, validating every record against the schema.

    Errors name the offending line (1-based).
    """
    expected = {"id", schema.label_field, *schema.span_fields}
    instances = []
    seen_ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise DataError(f"line {lineno}: expected an object")
            missing = expected - set(rec)
            if missing:
                raise DataError(f"line {lineno}: missing field {sorted(missing)[0]!r}")
            extra = set(rec) - expected
            if extra:
                raise DataError(f"line {lineno}: unexpected field {sorted(extra)[0]!r}")
            inst_id = rec["id"]
            if not isinstance(inst_id, str) or not inst_id:
                raise DataError(f"line {lineno}: id must be a nonempty string")
            if inst_id in seen_ids:
                raise DataError(f"line {lineno}: duplicate id {inst_id!r}")
            seen_ids.add(inst_id)
            values = {}
            for name in schema.span_fields:
                if not isinstance(rec[name], str):
                    raise DataError(f"line {lineno}: field {name!r} must be a string")
                values[name] = rec[name]
            label = _parse_label(rec[schema.label_field], schema, lineno)
            instances.append(Instance(id=inst_id, field_values=values, label=label))
    return Dataset(schema=schema, instances=tuple(instances))


def save_jsonl(dataset: Dataset, path) -> None:
    """Canonical serialization: sorted ids, sorted keys, one record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dataset.to_jsonl())


def save_split_file(dataset: Dataset, path) -> None:
    if dataset.split_assignment is None:
        raise DataError("dataset has no split assignment")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dict(sorted(dataset.split_assignment.items())), fh, indent=0, sort_keys=True)
        fh.write("\n")


def load_split_file(dataset: Dataset, path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        assignment = json.load(fh)
    return replace(dataset, split_assignment=assignment)


def split(
    dataset: Dataset,
    seed: int = 0,
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    sizes: tuple[int, int, int] | None = None,
) -> Dataset:
    """Assign train/dev/test deterministically from (seed, sorted ids).

    Ratio remainders go train, then dev, then test. ``sizes`` overrides the
    ratios with exact counts (must sum to the corpus size).
    """
    n = len(dataset)
    if n < len(SPLIT_NAMES):
        raise DataError(f"need at least {len(SPLIT_NAMES)} instances to split, got {n}")
    if sizes is not None:
        counts = [int(c) for c in sizes]
        if len(counts) != 3 or any(c < 0 for c in counts):
            raise DataError("sizes must be three nonnegative counts")
        if sum(counts) != n:
            raise DataError(f"sizes sum to {sum(counts)}, corpus has {n}")
    else:
        if len(ratios) != 3 or any(r < 0 for r in ratios):
            raise DataError("ratios must be three nonnegative numbers")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise DataError(f"ratios must sum to 1, got {sum(ratios)}")
        counts = [int(n * r) for r in ratios]
        for i in range(n - sum(counts)):  # remainder: train -> dev -> test
            counts[i % 3] += 1
    ids = sorted(inst.id for inst in dataset.instances)
    perm = np.random.default_rng(seed).permutation(n)
    assignment = {}
    bounds = (counts[0], counts[0] + counts[1])
    for position, idx in enumerate(perm):
        if position < bounds[0]:
            name = "train"
        elif position < bounds[1]:
            name = "dev"
        else:
            name = "test"
        assignment[ids[idx]] = name
    return replace(dataset, split_assignment=assignment)


def align_check(original: Dataset, rephrased: Dataset) -> None:
    """Verify the rephrased corpus is index-aligned with the original.

    Same ids, same split assignment, same labels; only field text may
    differ. Raises AlignmentError listing the offending ids.
    """
    if original.schema != rephrased.schema:
        raise AlignmentError(
            f"schema mismatch: {original.schema.name!r} vs {rephrased.schema.name!r}"
        )
    orig_ids = {inst.id for inst in original.instances}
    reph_ids = {inst.id for inst in rephrased.instances}
    if orig_ids != reph_ids:
        missing = sorted(orig_ids - reph_ids)
        added = sorted(reph_ids - orig_ids)
        raise AlignmentError(f"id mismatch: missing={missing} added={added}")
    a, b = original.split_assignment, rephrased.split_assignment
    if (a is None) != (b is None):
        raise AlignmentError("split mismatch: only one dataset has a split assignment")
    if a is not None:
        moved = sorted(i for i in orig_ids if a[i] != b[i])
        if moved:
            raise AlignmentError(f"split mismatch: {moved}")
    orig_by, reph_by = original.by_id(), rephrased.by_id()
    drifted = sorted(i for i in orig_ids if orig_by[i].label != reph_by[i].label)
    if drifted:
        raise AlignmentError(f"label drift: {drifted}")


@dataclass(frozen=True)
class FeatureExtractor:
    """Signed hashed bag-of-tokens over the schema's span fields.

    Tokens are lowercased whitespace-separated words; each hashes (blake2b)
    to one of ``dimension`` buckets with a +/-1 sign; the vector is
    L2-normalized. Purely a function of the text, so identical spans always
    featurize identically.
    """

    dimension: int = 64
    fields: tuple[str, ...] | None = None  # None: all span fields in schema order

    def __post_init__(self):
        if self.dimension < 1:
            raise DataError(f"dimension must be >= 1, got {self.dimension}")
        if self.fields is not None:
            object.__setattr__(self, "fields", tuple(self.fields))

    def vector(self, text: str) -> np.ndarray:
        v = np.zeros(self.dimension)
        for token in text.lower().split():
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=9).digest()
            idx = int.from_bytes(digest[:8], "big") % self.dimension
            v[idx] += 1.0 if digest[8] & 1 else -1.0
        norm = np.linalg.norm(v)
        if norm > 0:
            v /= norm
        return v

    def instance_text(self, instance: Instance, schema: TaskSchema) -> str:
        names = self.fields if self.fields is not None else schema.span_fields
        return " ".join(instance.field_values[name] for name in names)


@dataclass(frozen=True)
class ArraySplits:
    train_x: np.ndarray
    train_y: np.ndarray
    dev_x: np.ndarray
    dev_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    train_ids: tuple[str, ...] = field(default=())
    dev_ids: tuple[str, ...] = field(default=())
    test_ids: tuple[str, ...] = field(default=())

    def split_arrays(self, split_name: str) -> tuple[np.ndarray, np.ndarray]:
        if split_name not in SPLIT_NAMES:
            raise DataError(f"unknown split {split_name!r}")
        return getattr(self, f"{split_name}_x"), getattr(self, f"{split_name}_y")


def featurize(dataset: Dataset, extractor: FeatureExtractor | None = None) -> ArraySplits:
    """Feature matrix and label vector per split, rows in sorted-id order."""
    if extractor is None:
        extractor = FeatureExtractor()
    if dataset.split_assignment is None:
        raise DataError("dataset has no split assignment; call split() first")
    by_id = dataset.by_id()
    out = {}
    for split_name in SPLIT_NAMES:
        ids = dataset.split_ids(split_name)
        if not ids:
            raise DataError(f"{split_name} split is empty")
        rows = [
            extractor.vector(extractor.instance_text(by_id[i], dataset.schema))
            for i in ids
        ]
        out[f"{split_name}_x"] = np.stack(rows)
        out[f"{split_name}_y"] = np.array([by_id[i].label for i in ids], dtype=np.intp)
        out[f"{split_name}_ids"] = tuple(ids)
    return ArraySplits(**out)


def builtin_schemas() -> dict[str, TaskSchema]:
    """Schema registry for the supported task shapes."""
    return {
        "synthetic": TaskSchema(
            name="synthetic",
            fields=(FieldSpec("text", "rewritable_span"), FieldSpec("label", "label")),
            label_space=("class_0", "class_1"),
        ),
        "copa_like": TaskSchema(
            name="copa_like",
            fields=(
                FieldSpec("premise", "rewritable_span"),
                FieldSpec("question", "fixed_span"),
                FieldSpec("choice1", "fixed_span"),
                FieldSpec("choice2", "fixed_span"),
                FieldSpec("label", "label"),
            ),
            label_space=("choice1", "choice2"),
        ),
        "nli_pair": TaskSchema(
            name="nli_pair",
            fields=(
                FieldSpec("premise", "rewritable_span"),
                FieldSpec("hypothesis", "fixed_span"),
                FieldSpec("label", "label"),
            ),
            label_space=("entailment", "contradiction", "neutral"),
        ),
        "passage_question": TaskSchema(
            name="passage_question",
            fields=(
                FieldSpec("passage", "rewritable_span"),
                FieldSpec("question", "fixed_span"),
                FieldSpec("label", "label"),
            ),
            label_space=("yes", "no"),
        ),
        "science_mc": TaskSchema(
            name="science_mc",
            fields=(
                FieldSpec("question", "rewritable_span"),
                FieldSpec("choice_a", "fixed_span"),
                FieldSpec("choice_b", "fixed_span"),
                FieldSpec("choice_c", "fixed_span"),
                FieldSpec("choice_d", "fixed_span"),
                FieldSpec("label", "label"),
            ),
            label_space=("A", "B", "C", "D"),
        ),
    }
