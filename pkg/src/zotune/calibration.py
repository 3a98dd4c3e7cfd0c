"""Judge calibration: score a judge template against a human-labeled pair
set, gate at a threshold (>= 0.90 passes, so 36/40 is a pass), and scaffold
the human-in-the-loop revision rounds.

The loop never edits a template itself. A failing round emits a worksheet
listing every mismatch; the revised template comes back through a file (or
an injected callback in tests), and the loop re-evaluates until it passes or
the round limit is hit, in which case the outcome is explicitly marked not
calibrated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .backends import Backend
from .data import Instance, TaskSchema
from .pipeline import NOT_SAME, SAME, Verdict, judge_pair
from .templates import PromptTemplate

__all__ = [
    "CalibrationError",
    "LabeledPair",
    "PairOutcome",
    "CalibrationReport",
    "CalibrationOutcome",
    "evaluate_judge",
    "calibration_loop",
    "write_worksheet",
    "load_pairs",
    "save_pairs",
]

DEFAULT_THRESHOLD = 0.90


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LabeledPair:
    pair_id: str
    original: Instance
    rewritten_span: str
    human_label: str  # SAME | NOT_SAME; human labels never include unparseable

    def __post_init__(self):
        if self.human_label not in (SAME, NOT_SAME):
            raise ValueError(f"human_label must be {SAME!r} or {NOT_SAME!r}")


@dataclass(frozen=True)
class PairOutcome:
    pair_id: str
    human_label: str
    model_verdict: str
    match: bool

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "human_label": self.human_label,
            "model_verdict": self.model_verdict,
            "match": self.match,
        }


@dataclass(frozen=True)
class CalibrationReport:
    rows: tuple[PairOutcome, ...]
    threshold: float
    template_name: str
    template_version: int

    @property
    def judge_acc(self) -> float:
        return sum(1 for r in self.rows if r.match) / len(self.rows)

    @property
    def passed(self) -> bool:
        return self.judge_acc >= self.threshold

    def mismatches(self) -> tuple[PairOutcome, ...]:
        return tuple(r for r in self.rows if not r.match)

    def summary(self) -> dict:
        return {
            "pairs": len(self.rows),
            "matches": sum(1 for r in self.rows if r.match),
            "judge_acc": self.judge_acc,
            "threshold": self.threshold,
            "passed": self.passed,
            "template_name": self.template_name,
            "template_version": self.template_version,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) for r in self.rows]
        lines.append(json.dumps({"summary": self.summary()}, sort_keys=True, ensure_ascii=False))
        return "".join(line + "\n" for line in lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


@dataclass(frozen=True)
class CalibrationOutcome:
    template: PromptTemplate
    reports: tuple[CalibrationReport, ...]
    calibrated: bool

    @property
    def rounds(self) -> int:
        return len(self.reports)


def evaluate_judge(
    backend: Backend,
    judge_template: PromptTemplate,
    schema: TaskSchema,
    pairs,
    threshold: float = DEFAULT_THRESHOLD,
) -> CalibrationReport:
    """Judge every pair and score agreement with the human labels.

    An unparseable verdict matches neither label. Raises only if every
    single judge call failed at the backend level.
    """
    pairs = list(pairs)
    if not pairs:
        raise CalibrationError("pair set is empty")
    rows = []
    failures = 0
    for pair in pairs:
        verdict: Verdict = judge_pair(
            backend, judge_template, schema, pair.original, pair.rewritten_span
        )
        if verdict.error is not None:
            failures += 1
        rows.append(
            PairOutcome(
                pair_id=pair.pair_id,
                human_label=pair.human_label,
                model_verdict=verdict.value,
                match=verdict.value == pair.human_label,
            )
        )
    if failures == len(pairs):
        raise CalibrationError("every judge call failed; backend unavailable")
    return CalibrationReport(
        rows=tuple(rows),
        threshold=threshold,
        template_name=judge_template.name,
        template_version=judge_template.version,
    )


def write_worksheet(report: CalibrationReport, pairs, path) -> None:
    """Human-readable revision worksheet: every mismatched pair with both
    spans and both labels."""
    by_id = {p.pair_id: p for p in pairs}
    lines = [
        f"Judge calibration worksheet: template {report.template_name} "
        f"v{report.template_version}",
        f"judge_acc = {report.judge_acc:.4f} "
        f"({sum(1 for r in report.rows if r.match)}/{len(report.rows)}), "
        f"threshold {report.threshold:.2f}: "
        + ("PASSED" if report.passed else "NOT PASSED"),
        "",
        "Mismatched pairs (revise the judge template, bump its version, and rerun):",
        "",
    ]
    for row in report.mismatches():
        pair = by_id[row.pair_id]
        lines.append(f"pair_id: {row.pair_id}")
        lines.append(f"  human label:   {row.human_label}")
        lines.append(f"  model verdict: {row.model_verdict}")
        lines.append(f"  original span:  {pair.original.field_values}")
        lines.append(f"  rewritten span: {pair.rewritten_span}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def calibration_loop(
    backend: Backend,
    initial_template: PromptTemplate,
    schema: TaskSchema,
    pairs,
    threshold: float = DEFAULT_THRESHOLD,
    max_rounds: int = 3,
    worksheet_dir=None,
    request_revision: Callable[[CalibrationReport, Path | None], PromptTemplate | None]
    | None = None,
) -> CalibrationOutcome:
    """Evaluate-revise rounds until the template passes or rounds run out.

    ``request_revision(report, worksheet_path)`` supplies the next
    human-revised template (return None to stop early); without it the loop
    is a single evaluation. Pairs are held fixed across rounds.
    """
    if max_rounds < 1:
        raise CalibrationError(f"max_rounds must be >= 1, got {max_rounds}")
    template = initial_template
    reports = []
    for round_index in range(max_rounds):
        report = evaluate_judge(backend, template, schema, pairs, threshold)
        reports.append(report)
        if report.passed:
            return CalibrationOutcome(template=template, reports=tuple(reports), calibrated=True)
        worksheet_path = None
        if worksheet_dir is not None:
            worksheet_path = Path(worksheet_dir) / f"worksheet_round_{round_index + 1}.txt"
            write_worksheet(report, pairs, worksheet_path)
        if round_index + 1 >= max_rounds or request_revision is None:
            break
        revised = request_revision(report, worksheet_path)
        if revised is None:
            break
        template = revised
    return CalibrationOutcome(template=template, reports=tuple(reports), calibrated=False)


def save_pairs(pairs, schema: TaskSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {
                "pair_id": p.pair_id,
                "original": {
                    **{k: p.original.field_values[k] for k in schema.span_fields},
                    schema.label_field: schema.label_space[p.original.label],
                },
                "rewritten_span": p.rewritten_span,
                "human_label": p.human_label,
            }
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def load_pairs(path, schema: TaskSchema) -> list[LabeledPair]:
    out = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                original = rec["original"]
                label_name = original[schema.label_field]
                instance = Instance(
                    id=rec["pair_id"],
                    field_values={k: original[k] for k in schema.span_fields},
                    label=schema.label_space.index(label_name),
                )
                pair = LabeledPair(
                    pair_id=rec["pair_id"],
                    original=instance,
                    rewritten_span=rec["rewritten_span"],
                    human_label=rec["human_label"],
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CalibrationError(f"pair line {lineno}: {exc!r}") from exc
            if pair.pair_id in seen:
                raise CalibrationError(f"pair line {lineno}: duplicate pair_id")
            seen.add(pair.pair_id)
            out.append(pair)
    return out
