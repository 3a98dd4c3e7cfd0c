"""Synthetic noisy-phrasing task: class-signal tokens polluted by
class-independent distractor tokens, plus the rule table that strips the
distractors.

Construction. Each class owns a few exclusive marker tokens; every span
carries at least one, so the label is a pure function of its signal tokens.
The rest of a span is filler drawn from a shared class-independent
vocabulary. The vocabularies are mined against the hashed feature space:
filler tokens are chosen to hash outside the marker buckets, while
distractor tokens are chosen to hash exactly into them. Injected distractors
therefore corrupt the only discriminative feature coordinates, which is what
makes the Original variant noisy, and stripping them (the emitted rule
table removes exactly the distractor vocabulary) restores a cleanly
separable problem. Distractors are injected independently of the label, so
removing them can never change a label.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .backends import RewriteRules
from .data import Dataset, FieldSpec, Instance, TaskSchema

__all__ = ["SyntheticTaskSpec", "generate_synthetic_task"]


@dataclass(frozen=True)
class SyntheticTaskSpec:
    n_classes: int = 2
    exclusive_vocab_size: int = 4  # class-marker tokens per class
    filler_vocab_size: int = 40  # shared across classes
    distractor_vocab_size: int = 48  # shared, removable
    tokens_per_span: int = 12
    exclusive_rate: float = 0.15  # probability a signal slot is a class marker
    injection_rate: float = 0.10  # probability a span slot holds a distractor
    corpus_size: int = 1400
    feature_dimension: int = 64  # hash space the vocabularies are mined against
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.n_classes}")
        if min(self.exclusive_vocab_size, self.filler_vocab_size, self.distractor_vocab_size) < 1:
            raise ValueError("vocabulary sizes must be positive")
        if self.tokens_per_span < 1:
            raise ValueError("tokens_per_span must be positive")
        if not 0.0 < self.exclusive_rate <= 1.0:
            raise ValueError(f"exclusive_rate must lie in (0, 1], got {self.exclusive_rate}")
        if not 0.0 <= self.injection_rate < 1.0:
            raise ValueError(
                f"injection_rate must lie in [0, 1); {self.injection_rate} leaves no signal"
            )
        if self.corpus_size < self.n_classes:
            raise ValueError("corpus_size must cover every class")
        if self.n_classes * self.exclusive_vocab_size > self.feature_dimension:
            raise ValueError("marker tokens cannot occupy distinct buckets; shrink vocabularies")
        if self.feature_dimension < 2:
            raise ValueError("feature_dimension must be >= 2")


def _bucket(token: str, dimension: int) -> int:
    # must match FeatureExtractor.vector's bucket rule
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=9).digest()
    return int.from_bytes(digest[:8], "big") % dimension


def _mine(prefix: str, count: int, keep, dimension: int) -> list[str]:
    out = []
    k = 0
    while len(out) < count:
        token = f"{prefix}{k}"
        k += 1
        if keep(_bucket(token, dimension)):
            out.append(token)
        if k > 1000 * count + 1000:
            raise ValueError(f"could not mine {count} {prefix!r} tokens")
    return out


def _vocabularies(spec: SyntheticTaskSpec):
    dim = spec.feature_dimension
    marker_buckets: set[int] = set()
    exclusive = []
    for c in range(spec.n_classes):
        tokens = []
        k = 0
        while len(tokens) < spec.exclusive_vocab_size:
            token = f"sig{c}tok{k}"
            k += 1
            bucket = _bucket(token, dim)
            if bucket not in marker_buckets:
                marker_buckets.add(bucket)
                tokens.append(token)
            if k > 1000 * spec.exclusive_vocab_size + 1000:
                raise ValueError("could not mine marker tokens with distinct buckets")
        exclusive.append(tokens)
    filler = _mine("fill", spec.filler_vocab_size, lambda b: b not in marker_buckets, dim)
    distractor = _mine("noise", spec.distractor_vocab_size, lambda b: b in marker_buckets, dim)
    return exclusive, filler, distractor


def _schema_for(spec: SyntheticTaskSpec) -> TaskSchema:
    return TaskSchema(
        name="synthetic",
        fields=(FieldSpec("text", "rewritable_span"), FieldSpec("label", "label")),
        label_space=tuple(f"class_{c}" for c in range(spec.n_classes)),
    )


def generate_synthetic_task(spec: SyntheticTaskSpec) -> tuple[Dataset, RewriteRules]:
    """Original-variant corpus plus the distractor-removal rule table.

    Labels are balanced (round-robin) and every span keeps at least one of
    its class's marker tokens, so the label stays decodable from the signal
    tokens alone. Deterministic: the same spec always yields byte-identical
    corpora.
    """
    rng = np.random.default_rng(spec.seed)
    exclusive, filler, distractor = _vocabularies(spec)

    width = max(5, len(str(spec.corpus_size - 1)))
    instances = []
    for i in range(spec.corpus_size):
        label = i % spec.n_classes
        markers = exclusive[label]
        is_distractor = rng.random(spec.tokens_per_span) < spec.injection_rate
        if is_distractor.all():
            is_distractor[0] = False  # keep at least one signal slot
        is_marker = ~is_distractor & (rng.random(spec.tokens_per_span) < spec.exclusive_rate)
        if not is_marker.any():
            is_marker[np.flatnonzero(~is_distractor)[0]] = True
        tokens = []
        for slot in range(spec.tokens_per_span):
            if is_distractor[slot]:
                tokens.append(distractor[int(rng.integers(len(distractor)))])
            elif is_marker[slot]:
                tokens.append(markers[int(rng.integers(len(markers)))])
            else:
                tokens.append(filler[int(rng.integers(len(filler)))])
        instances.append(
            Instance(
                id=f"syn_{i:0{width}d}",
                field_values={"text": " ".join(tokens)},
                label=label,
            )
        )
    dataset = Dataset(schema=_schema_for(spec), instances=tuple(instances))
    rules = RewriteRules(remove_tokens=frozenset(distractor))
    return dataset, rules
