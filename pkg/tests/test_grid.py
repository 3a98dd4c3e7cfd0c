import pytest

from zotune.backends import FixtureBackend, RuleRewriterBackend
from zotune.data import split
from zotune.grid import (
    DESK_GRID,
    PAPER_GRID,
    ExperimentGrid,
    FOGrid,
    GridError,
    LoRAGrid,
    ResultTable,
    ZOGrid,
    emit_report,
    run_fo_condition,
    run_grid,
    run_lora_condition,
    run_zo_condition,
    sweep_method,
)
from zotune.pipeline import build_corpus
from zotune.synth import SyntheticTaskSpec, generate_synthetic_task
from zotune.templates import PromptTemplate, canonical_slots, schema_description


def make_templates(schema):
    rewriter = PromptTemplate(
        name="tiny_rewriter",
        version=1,
        schema_name=schema.name,
        sections=(
            ("task_description", schema_description(schema)),
            ("requirements", 'Reply with one line starting with "Rewritten:".'),
            ("instance_slots", canonical_slots(schema)),
        ),
    )
    judge = PromptTemplate(
        name="tiny_judge",
        version=1,
        schema_name=schema.name,
        sections=(
            ("task_description", schema_description(schema)),
            ("requirements", 'Answer "Same." or "Not the same.".'),
            ("instance_slots", canonical_slots(schema, style="judge")),
        ),
    )
    return rewriter, judge


def synthetic_pair(seed=0, sizes=(80, 20, 20), **spec_overrides):
    """Original corpus plus its rule-rewritten rephrasing, split and aligned."""
    overrides = dict(corpus_size=sum(sizes), tokens_per_span=8, seed=seed)
    overrides.update(spec_overrides)
    spec = SyntheticTaskSpec(**overrides)
    corpus, rules = generate_synthetic_task(spec)
    corpus = split(corpus, seed=seed, sizes=sizes)
    rewriter, judge = make_templates(corpus.schema)
    rephrased, report = build_corpus(
        RuleRewriterBackend(rules),
        rewriter,
        judge,
        corpus,
        judge_backend=FixtureBackend("Same."),
    )
    assert report.rewriter_accuracy == 1.0
    return corpus, rephrased


TINY_GRID = ExperimentGrid(
    zo=ZOGrid(learning_rates=(0.3,), batch_sizes=(8,), steps=60),
    fo_full=FOGrid(learning_rates=(0.05,), batch_sizes=(8,), steps=40),
    fo_lora=LoRAGrid(learning_rates=(0.05,), ranks=(2,), batch_size=8, steps=40),
)


class TestResultTable:
    def table(self):
        return ResultTable(
            accuracies={
                ("original", "zo"): {"alpha": 0.80, "beta": 0.60},
                ("rephrased", "zo"): {"alpha": 0.82, "beta": 0.66},
                ("original", "fo_full"): {"alpha": 0.90, "beta": 0.70},
                ("rephrased", "fo_full"): {"alpha": 0.88, "beta": 0.72},
            }
        )

    def test_avg_delta_arithmetic(self):
        table = self.table()
        assert table.avg_delta("zo") == pytest.approx(0.04, abs=1e-12)
        assert table.avg_delta("fo_full") == pytest.approx(0.0, abs=1e-12)

    def test_avg_delta_needs_paired_rows(self):
        table = ResultTable(accuracies={("original", "zo"): {"alpha": 0.8}})
        with pytest.raises(GridError, match="paired"):
            table.avg_delta("zo")

    def test_avg_delta_uses_only_shared_tasks(self):
        table = ResultTable(
            accuracies={
                ("original", "zo"): {"alpha": 0.50, "gamma": 0.10},
                ("rephrased", "zo"): {"alpha": 0.60, "delta": 0.99},
            }
        )
        assert table.avg_delta("zo") == pytest.approx(0.10)

    def test_average(self):
        assert self.table().average("original", "zo") == pytest.approx(0.70)

    def test_tasks_sorted_and_methods_in_declared_order(self):
        table = self.table()
        assert table.tasks() == ("alpha", "beta")
        assert table.methods() == ("zo", "fo_full")

    def test_unknown_method_rejected(self):
        with pytest.raises(GridError, match="method"):
            ResultTable(accuracies={("original", "sgd"): {"t": 0.5}})

    def test_unknown_data_type_rejected(self):
        with pytest.raises(GridError, match="data type"):
            ResultTable(accuracies={("shuffled", "zo"): {"t": 0.5}})

    def test_merge_disjoint_tasks(self):
        other = ResultTable(accuracies={("original", "zo"): {"gamma": 0.55}})
        merged = self.table().merge(other)
        assert merged.accuracy("original", "zo", "gamma") == 0.55
        assert merged.accuracy("original", "zo", "alpha") == 0.80

    def test_merge_duplicate_task_rejected(self):
        other = ResultTable(accuracies={("original", "zo"): {"alpha": 0.99}})
        with pytest.raises(GridError, match="duplicate"):
            self.table().merge(other)

    def test_json_round_trip(self, tmp_path):
        table = self.table()
        path = tmp_path / "table.json"
        table.save(path)
        loaded = ResultTable.load(path)
        assert loaded.accuracies == table.accuracies
        assert loaded.to_json() == table.to_json()


GOLDEN_PLAIN = (
    "method   data       alpha   beta    avg     avg_delta\n"
    "ZO-MeZO  Original   0.8000  0.6000  0.7000\n"
    "ZO-MeZO  Rephrased  0.8200  0.6600  0.7400  +0.0400\n"
    "FO-Full  Original   0.9000  0.7000  0.8000\n"
    "FO-Full  Rephrased  0.8800  0.7200  0.8000  +0.0000\n"
)

GOLDEN_DELIMITED = (
    "method\tdata\talpha\tbeta\tavg\tavg_delta\n"
    "ZO-MeZO\tOriginal\t0.8000\t0.6000\t0.7000\t\n"
    "ZO-MeZO\tRephrased\t0.8200\t0.6600\t0.7400\t+0.0400\n"
    "FO-Full\tOriginal\t0.9000\t0.7000\t0.8000\t\n"
    "FO-Full\tRephrased\t0.8800\t0.7200\t0.8000\t+0.0000\n"
)


class TestEmitReport:
    def table(self):
        return TestResultTable().table()

    def test_plain_matches_golden(self):
        assert emit_report(self.table()) == GOLDEN_PLAIN

    def test_delimited_matches_golden(self):
        assert emit_report(self.table(), fmt="delimited") == GOLDEN_DELIMITED

    def test_byte_deterministic(self):
        assert emit_report(self.table()) == emit_report(self.table())

    def test_empty_table_is_header_only(self):
        assert emit_report(ResultTable()) == "method  data  avg  avg_delta\n"
        assert emit_report(ResultTable(), fmt="delimited") == "method\tdata\tavg\tavg_delta\n"

    def test_unknown_format_rejected(self):
        with pytest.raises(GridError, match="format"):
            emit_report(self.table(), fmt="markdown")


class TestSweepMethod:
    def test_tie_keeps_first_declared_cell(self):
        original, _ = synthetic_pair(seed=5)
        from zotune.data import featurize

        splits = featurize(original)
        # zero steps: every cell leaves the init model, so dev accuracy ties
        grid = ExperimentGrid(
            zo=ZOGrid(learning_rates=(0.3, 0.1), batch_sizes=(4, 8), steps=0),
            fo_full=TINY_GRID.fo_full,
            fo_lora=TINY_GRID.fo_lora,
        )
        best = sweep_method(grid, "zo", splits)
        assert best.params["lr"] == 0.3
        assert best.params["batch_size"] == 4

    def test_failing_cell_names_method_and_cell(self):
        original, _ = synthetic_pair(seed=5)
        from zotune.data import featurize

        splits = featurize(original)
        grid = ExperimentGrid(
            zo=ZOGrid(learning_rates=(-1.0,), batch_sizes=(8,), steps=10),
            fo_full=TINY_GRID.fo_full,
            fo_lora=TINY_GRID.fo_lora,
        )
        with pytest.raises(GridError, match=r"zo cell .*'lr': -1\.0"):
            sweep_method(grid, "zo", splits)

    def test_unknown_method(self):
        original, _ = synthetic_pair(seed=5)
        from zotune.data import featurize

        with pytest.raises(GridError, match="unknown method"):
            sweep_method(TINY_GRID, "sgd", featurize(original))


class TestRunGrid:
    def test_single_config_grid_equals_direct_runs(self):
        original, rephrased = synthetic_pair(seed=7)
        from zotune.data import featurize

        table = run_grid(TINY_GRID, original, rephrased, task_name="toy")
        splits = featurize(original)
        zo = run_zo_condition(splits, 0.3, 8, 60, seed=0)
        fo = run_fo_condition(splits, 0.05, 8, 40, seed=0)
        lora = run_lora_condition(splits, 0.05, 2, 8, 40, seed=0)
        assert table.accuracy("original", "zo", "toy") == zo.test_accuracy
        assert table.accuracy("original", "fo_full", "toy") == fo.test_accuracy
        assert table.accuracy("original", "fo_lora", "toy") == lora.test_accuracy

    def test_identical_corpora_give_zero_delta(self):
        original, _ = synthetic_pair(seed=7)
        table = run_grid(TINY_GRID, original, original)
        for method in ("zo", "fo_full", "fo_lora"):
            assert table.avg_delta(method) == 0.0

    def test_default_task_name_is_schema_name(self):
        original, rephrased = synthetic_pair(seed=7)
        table = run_grid(TINY_GRID, original, rephrased)
        assert table.tasks() == ("synthetic",)

    def test_byte_deterministic(self):
        original, rephrased = synthetic_pair(seed=7)
        first = run_grid(TINY_GRID, original, rephrased)
        second = run_grid(TINY_GRID, original, rephrased)
        assert first.to_json() == second.to_json()

    def test_misaligned_corpora_rejected(self):
        original, _ = synthetic_pair(seed=7)
        other, _ = synthetic_pair(seed=8)
        with pytest.raises(Exception):
            run_grid(TINY_GRID, original, other)

    def test_desk_grid_finds_positive_zo_delta_on_noisy_task(self):
        """The headline experiment: with default desk-scale sweeps, removing
        hash-colliding distractors helps the zeroth-order condition."""
        original, rephrased = synthetic_pair(seed=0, sizes=(1000, 200, 200), tokens_per_span=12)
        table = run_grid(DESK_GRID, original, rephrased)
        assert table.avg_delta("zo") >= 0.03
        assert abs(table.avg_delta("fo_full")) < table.avg_delta("zo")


class TestGridConfigs:
    def test_desk_grid_shape(self):
        assert DESK_GRID.seed == 0
        assert DESK_GRID.zo.batch_sizes == (4,)
        assert DESK_GRID.zo.delta == 1e-3

    def test_paper_grid_documented(self):
        assert 1e-7 in PAPER_GRID.zo.learning_rates
        assert PAPER_GRID.fo_lora.ranks == (8, 16, 32)
