import numpy as np
import pytest

from zotune.data import FeatureExtractor
from zotune.synth import SyntheticTaskSpec, _bucket, _vocabularies, generate_synthetic_task


def small_spec(**overrides):
    base = dict(
        n_classes=2,
        exclusive_vocab_size=3,
        filler_vocab_size=12,
        distractor_vocab_size=10,
        tokens_per_span=8,
        corpus_size=60,
        seed=3,
    )
    base.update(overrides)
    return SyntheticTaskSpec(**base)


class TestSpecValidation:
    def test_defaults_are_valid(self):
        spec = SyntheticTaskSpec()
        assert spec.n_classes == 2
        assert spec.corpus_size == 1400

    def test_injection_rate_one_rejected(self):
        with pytest.raises(ValueError, match="leaves no signal"):
            small_spec(injection_rate=1.0)

    def test_injection_rate_above_one_rejected(self):
        with pytest.raises(ValueError, match="leaves no signal"):
            small_spec(injection_rate=1.5)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="classes"):
            small_spec(n_classes=1)

    def test_zero_exclusive_rate_rejected(self):
        with pytest.raises(ValueError, match="exclusive_rate"):
            small_spec(exclusive_rate=0.0)

    def test_zero_span_rejected(self):
        with pytest.raises(ValueError):
            small_spec(tokens_per_span=0)

    def test_corpus_smaller_than_classes_rejected(self):
        with pytest.raises(ValueError, match="corpus_size"):
            small_spec(corpus_size=2, n_classes=3)

    def test_markers_exceeding_buckets_rejected(self):
        with pytest.raises(ValueError, match="buckets"):
            small_spec(n_classes=4, exclusive_vocab_size=3, feature_dimension=8)

    def test_empty_vocab_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            small_spec(filler_vocab_size=0)


class TestVocabularyMining:
    def test_marker_buckets_globally_distinct(self):
        spec = small_spec(n_classes=3)
        exclusive, _, _ = _vocabularies(spec)
        buckets = [
            _bucket(tok, spec.feature_dimension) for toks in exclusive for tok in toks
        ]
        assert len(buckets) == len(set(buckets)) == 9

    def test_filler_avoids_marker_buckets(self):
        spec = small_spec()
        exclusive, filler, _ = _vocabularies(spec)
        marker_buckets = {
            _bucket(tok, spec.feature_dimension) for toks in exclusive for tok in toks
        }
        for tok in filler:
            assert _bucket(tok, spec.feature_dimension) not in marker_buckets

    def test_distractors_collide_with_marker_buckets(self):
        spec = small_spec()
        exclusive, _, distractor = _vocabularies(spec)
        marker_buckets = {
            _bucket(tok, spec.feature_dimension) for toks in exclusive for tok in toks
        }
        assert len(distractor) == spec.distractor_vocab_size
        for tok in distractor:
            assert _bucket(tok, spec.feature_dimension) in marker_buckets

    def test_bucket_matches_feature_extractor(self):
        # distractor mining only works if both sides hash identically
        extractor = FeatureExtractor(dimension=64)
        for token in ("sig0tok0", "fill3", "noise7", "weird_token"):
            vec = extractor.vector(token)
            assert np.flatnonzero(vec)[0] == _bucket(token, 64)


class TestGenerate:
    def test_deterministic_bytes(self):
        spec = small_spec()
        a, rules_a = generate_synthetic_task(spec)
        b, rules_b = generate_synthetic_task(spec)
        assert a.to_jsonl() == b.to_jsonl()
        assert rules_a == rules_b

    def test_seed_changes_corpus(self):
        a, _ = generate_synthetic_task(small_spec(seed=1))
        b, _ = generate_synthetic_task(small_spec(seed=2))
        assert a.to_jsonl() != b.to_jsonl()

    def test_schema_shape(self):
        corpus, _ = generate_synthetic_task(small_spec(n_classes=3))
        assert corpus.schema.name == "synthetic"
        assert corpus.schema.rewritable_fields == ("text",)
        assert corpus.schema.label_space == ("class_0", "class_1", "class_2")

    def test_labels_round_robin(self):
        spec = small_spec(n_classes=3, corpus_size=61)
        corpus, _ = generate_synthetic_task(spec)
        assert [inst.label for inst in corpus.instances] == [
            i % 3 for i in range(spec.corpus_size)
        ]

    def test_span_lengths(self):
        spec = small_spec(tokens_per_span=9)
        corpus, _ = generate_synthetic_task(spec)
        for inst in corpus.instances:
            assert len(inst.field_values["text"].split()) == 9

    def test_every_span_keeps_a_marker(self):
        spec = small_spec(injection_rate=0.6)
        corpus, _ = generate_synthetic_task(spec)
        exclusive, _, _ = _vocabularies(spec)
        for inst in corpus.instances:
            own = set(exclusive[inst.label])
            tokens = inst.field_values["text"].split()
            assert own & set(tokens)

    def test_markers_are_class_exclusive(self):
        spec = small_spec(n_classes=3, corpus_size=90)
        corpus, _ = generate_synthetic_task(spec)
        exclusive, _, _ = _vocabularies(spec)
        for inst in corpus.instances:
            for other in range(spec.n_classes):
                if other == inst.label:
                    continue
                assert not set(exclusive[other]) & set(inst.field_values["text"].split())

    def test_distractors_class_independent(self):
        """The injected vocabulary is shared: distractor tokens seen in class-0
        spans and class-1 spans overlap heavily rather than partitioning."""
        spec = small_spec(injection_rate=0.4, corpus_size=400)
        corpus, rules = generate_synthetic_task(spec)
        seen: dict[int, set[str]] = {0: set(), 1: set()}
        for inst in corpus.instances:
            seen[inst.label].update(
                tok for tok in inst.field_values["text"].split() if tok in rules.remove_tokens
            )
        assert seen[0] & seen[1]

    def test_rules_remove_exactly_distractor_vocab(self):
        spec = small_spec()
        _, rules = generate_synthetic_task(spec)
        _, _, distractor = _vocabularies(spec)
        assert rules.remove_tokens == frozenset(distractor)
        assert not rules.synonyms

    def test_rule_application_preserves_labels(self):
        spec = small_spec(injection_rate=0.5)
        corpus, rules = generate_synthetic_task(spec)
        exclusive, _, _ = _vocabularies(spec)
        for inst in corpus.instances:
            cleaned = rules.apply(inst.field_values["text"]).split()
            assert cleaned, "rules must never empty a span"
            assert set(exclusive[inst.label]) & set(cleaned)
            # signal tokens survive untouched, in order
            expected = [
                tok
                for tok in inst.field_values["text"].split()
                if tok not in rules.remove_tokens
            ]
            assert cleaned == expected

    def test_zero_injection_rate_makes_rules_identity(self):
        spec = small_spec(injection_rate=0.0)
        corpus, rules = generate_synthetic_task(spec)
        for inst in corpus.instances:
            text = inst.field_values["text"]
            assert rules.apply(text) == text

    def test_zero_injection_twice_byte_identical(self):
        spec = small_spec(injection_rate=0.0)
        a, _ = generate_synthetic_task(spec)
        b, _ = generate_synthetic_task(spec)
        assert a.to_jsonl() == b.to_jsonl()

    def test_id_format(self):
        corpus, _ = generate_synthetic_task(small_spec(corpus_size=12))
        assert corpus.instances[0].id == "syn_00000"
        assert corpus.instances[11].id == "syn_00011"

    def test_wide_ids_for_large_corpora(self):
        spec = small_spec(corpus_size=6, seed=0)
        corpus, _ = generate_synthetic_task(spec)
        assert all(len(inst.id) == len("syn_00000") for inst in corpus.instances)
