import pytest

from zotune.backends import BackendError, FixtureBackend, ScriptedBackend
from zotune.calibration import (
    CalibrationError,
    LabeledPair,
    calibration_loop,
    evaluate_judge,
    load_pairs,
    save_pairs,
    write_worksheet,
)
from zotune.data import FieldSpec, Instance, TaskSchema
from zotune.pipeline import NOT_SAME, SAME
from zotune.templates import parse_template

JUDGE_TEXT = """\
name: toy_judge
version: 1
schema: toy

[section: task_description]
Decide whether the rewrite preserves the meaning of the original.
[section: requirements]
Answer "Same." or "Not the same.".
[section: instance_slots]
hypothesis: {{hypothesis}}
Original: {{premise}}
Rewritten: {{rewritten}}
"""


def toy_schema():
    return TaskSchema(
        name="toy",
        fields=(
            FieldSpec("premise", "rewritable_span"),
            FieldSpec("hypothesis", "fixed_span"),
            FieldSpec("label", "label"),
        ),
        label_space=("yes", "no"),
    )


def judge_template(version=1):
    return parse_template(JUDGE_TEXT.replace("version: 1", f"version: {version}"))


def make_pairs(n=40, n_not_same=8):
    """First n_not_same pairs carry a human not_same label and a "flagged"
    marker token the test judges can key on."""
    pairs = []
    for i in range(n):
        flagged = i < n_not_same
        pairs.append(
            LabeledPair(
                pair_id=f"pair_{i:03d}",
                original=Instance(
                    id=f"pair_{i:03d}",
                    field_values={
                        "premise": ("flagged " if flagged else "") + f"premise {i}",
                        "hypothesis": f"hyp {i}",
                    },
                    label=i % 2,
                ),
                rewritten_span=f"candidate {i}",
                human_label=NOT_SAME if flagged else SAME,
            )
        )
    return pairs


def oracle_judge():
    return FixtureBackend(
        lambda req: "Not the same." if "flagged" in req.user_text else "Same."
    )


def judge_with_errors(wrong_ids):
    """Agrees with the oracle everywhere except the given pair indices."""

    def responder(req):
        truth = "Not the same." if "flagged" in req.user_text else "Same."
        for i in wrong_ids:
            if f"premise {i}\n" in req.user_text + "\n":
                return "Same." if truth.startswith("Not") else "Not the same."
        return truth

    return FixtureBackend(responder)


class TestEvaluateJudge:
    def test_oracle_judge_scores_one(self):
        report = evaluate_judge(oracle_judge(), judge_template(), toy_schema(), make_pairs())
        assert report.judge_acc == 1.0
        assert report.passed
        assert report.mismatches() == ()

    def test_37_of_40_passes(self):
        report = evaluate_judge(
            judge_with_errors([0, 10, 20]), judge_template(), toy_schema(), make_pairs()
        )
        assert report.judge_acc == pytest.approx(0.925)
        assert report.passed

    def test_36_of_40_passes_at_boundary(self):
        report = evaluate_judge(
            judge_with_errors([0, 10, 20, 30]), judge_template(), toy_schema(), make_pairs()
        )
        assert report.judge_acc == pytest.approx(0.90)
        assert report.passed

    def test_35_of_40_fails(self):
        report = evaluate_judge(
            judge_with_errors([0, 10, 20, 30, 39]), judge_template(), toy_schema(), make_pairs()
        )
        assert report.judge_acc == pytest.approx(0.875)
        assert not report.passed
        assert len(report.mismatches()) == 5

    def test_unparseable_matches_neither_label(self):
        pairs = make_pairs(4, n_not_same=2)
        report = evaluate_judge(FixtureBackend("hmm"), judge_template(), toy_schema(), pairs)
        assert report.judge_acc == 0.0

    def test_empty_pairs_rejected(self):
        with pytest.raises(CalibrationError):
            evaluate_judge(oracle_judge(), judge_template(), toy_schema(), [])

    def test_all_calls_failing_raises(self):
        pairs = make_pairs(3, n_not_same=0)
        backend = ScriptedBackend([BackendError("down")] * 3)
        with pytest.raises(CalibrationError, match="backend unavailable"):
            evaluate_judge(backend, judge_template(), toy_schema(), pairs)

    def test_partial_failures_count_as_mismatches(self):
        pairs = make_pairs(4, n_not_same=0)
        backend = ScriptedBackend(["Same.", BackendError("down"), "Same.", "Same."])
        report = evaluate_judge(backend, judge_template(), toy_schema(), pairs)
        assert report.judge_acc == 0.75

    def test_report_serialization(self):
        report = evaluate_judge(
            judge_with_errors([5]), judge_template(), toy_schema(), make_pairs(10, 2)
        )
        lines = report.to_jsonl().splitlines()
        assert len(lines) == 11
        assert '"judge_acc": 0.9' in lines[-1]
        assert '"template_version": 1' in lines[-1]


class TestCalibrationLoop:
    def test_passing_template_single_round(self):
        outcome = calibration_loop(
            oracle_judge(), judge_template(), toy_schema(), make_pairs()
        )
        assert outcome.calibrated
        assert outcome.rounds == 1
        assert outcome.template.version == 1

    def test_two_round_revision(self, tmp_path):
        """First template scores 0.80, the revision 0.925."""
        pairs = make_pairs()
        backends = {
            1: judge_with_errors(list(range(8))),  # 32/40 = 0.80
            2: judge_with_errors([0, 1, 2]),  # 37/40 = 0.925
        }

        class VersionedJudge(FixtureBackend):
            def __init__(self):
                self.version = 1

            def send(self, request):
                return backends[self.version].send(request)

        backend = VersionedJudge()
        worksheets = []

        def revise(report, worksheet_path):
            worksheets.append(worksheet_path)
            backend.version = 2
            return judge_template(version=2)

        outcome = calibration_loop(
            backend,
            judge_template(),
            toy_schema(),
            pairs,
            worksheet_dir=tmp_path,
            request_revision=revise,
        )
        assert outcome.calibrated
        assert outcome.rounds == 2
        assert [round(r.judge_acc, 4) for r in outcome.reports] == [0.80, 0.925]
        assert outcome.template.version == 2
        assert worksheets == [tmp_path / "worksheet_round_1.txt"]
        assert worksheets[0].exists()

    def test_max_rounds_exhaustion_not_calibrated(self):
        calls = []

        def revise(report, worksheet_path):
            calls.append(report.judge_acc)
            return judge_template(version=len(calls) + 1)

        outcome = calibration_loop(
            judge_with_errors(list(range(8))),
            judge_template(),
            toy_schema(),
            make_pairs(),
            max_rounds=3,
            request_revision=revise,
        )
        assert not outcome.calibrated
        assert outcome.rounds == 3
        assert len(calls) == 2  # no revision requested after the final round

    def test_revision_none_stops_early(self):
        outcome = calibration_loop(
            judge_with_errors(list(range(8))),
            judge_template(),
            toy_schema(),
            make_pairs(),
            max_rounds=5,
            request_revision=lambda report, path: None,
        )
        assert not outcome.calibrated
        assert outcome.rounds == 1

    def test_single_round_without_revision_hook(self):
        outcome = calibration_loop(
            judge_with_errors(list(range(8))),
            judge_template(),
            toy_schema(),
            make_pairs(),
            max_rounds=3,
        )
        assert not outcome.calibrated
        assert outcome.rounds == 1

    def test_bad_max_rounds(self):
        with pytest.raises(CalibrationError):
            calibration_loop(oracle_judge(), judge_template(), toy_schema(), make_pairs(), max_rounds=0)


class TestWorksheet:
    def test_lists_every_mismatch(self, tmp_path):
        pairs = make_pairs(10, 2)
        report = evaluate_judge(judge_with_errors([0, 5]), judge_template(), toy_schema(), pairs)
        path = tmp_path / "worksheet.txt"
        write_worksheet(report, pairs, path)
        text = path.read_text(encoding="utf-8")
        assert "pair_000" in text and "pair_005" in text
        assert "NOT PASSED" in text
        assert "human label" in text


class TestPairIO:
    def test_round_trip(self, tmp_path):
        pairs = make_pairs(6, 2)
        path = tmp_path / "pairs.jsonl"
        save_pairs(pairs, toy_schema(), path)
        loaded = load_pairs(path, toy_schema())
        assert loaded == pairs

    def test_duplicate_pair_id_rejected(self, tmp_path):
        pairs = make_pairs(1, 0)
        path = tmp_path / "pairs.jsonl"
        save_pairs(pairs * 2, toy_schema(), path)
        with pytest.raises(CalibrationError, match="duplicate"):
            load_pairs(path, toy_schema())

    def test_bad_label_rejected(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text(
            '{"pair_id": "p", "original": {"premise": "a", "hypothesis": "b", "label": "yes"},'
            ' "rewritten_span": "c", "human_label": "kinda"}\n',
            encoding="utf-8",
        )
        with pytest.raises(CalibrationError, match="line 1"):
            load_pairs(path, toy_schema())
