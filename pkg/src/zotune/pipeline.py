"""Rewrite-and-judge corpus pipeline: render rewriter prompt, rewrite one
rewritable span, render judge prompt, parse the verdict, and apply the
rejection gate that reinstates the original on anything short of an
affirmative "same".

The gate is conservative by construction: unparseable judge output and
backend failures count as rejections, so no ambiguous rewrite can enter the
corpus. Corpus size, ids, splits, and labels are invariant; only the target
field's text may change, and only under a Same verdict.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .backends import Backend, BackendError, ChatRequest
from .data import Dataset, Instance, TaskSchema, align_check
from .templates import (
    Annotation,
    FewShotExemplar,
    PromptTemplate,
    instance_values,
    render,
    validate_template,
)

__all__ = [
    "SAME",
    "NOT_SAME",
    "UNPARSEABLE",
    "ACCEPTED",
    "REJECTED_KEPT_ORIGINAL",
    "PipelineError",
    "RewriteParseError",
    "Verdict",
    "GateDecision",
    "RewriteResult",
    "GateRecord",
    "PipelineReport",
    "parse_verdict_text",
    "render_rewriter_prompt",
    "rewrite_instance",
    "render_judge_prompt",
    "judge_pair",
    "rejection_gate",
    "build_corpus",
    "assemble_few_shot",
    "save_candidates",
    "load_candidates",
]

SAME = "same"
NOT_SAME = "not_same"
UNPARSEABLE = "unparseable"

ACCEPTED = "accepted"
REJECTED_KEPT_ORIGINAL = "rejected_kept_original"

REJECT_REASONS = ("judge_not_same", "unparseable", "backend_error")

REWRITE_MARKER = "Rewritten:"

_NON_ALNUM_RE = re.compile(r"[^a-z0-9\s]")


class PipelineError(RuntimeError):
    pass


class RewriteParseError(PipelineError):
    pass


@dataclass(frozen=True)
class Verdict:
    value: str  # SAME | NOT_SAME | UNPARSEABLE
    raw_text: str
    error: str | None = None  # set when the judge call itself failed

    def __post_init__(self):
        if self.value not in (SAME, NOT_SAME, UNPARSEABLE):
            raise ValueError(f"unknown verdict value {self.value!r}")


@dataclass(frozen=True)
class GateDecision:
    value: str  # ACCEPTED | REJECTED_KEPT_ORIGINAL
    reason: str | None = None  # set iff rejected

    def __post_init__(self):
        if self.value not in (ACCEPTED, REJECTED_KEPT_ORIGINAL):
            raise ValueError(f"unknown gate value {self.value!r}")
        if self.value == REJECTED_KEPT_ORIGINAL and self.reason not in REJECT_REASONS:
            raise ValueError(f"rejection reason must be one of {REJECT_REASONS}")
        if self.value == ACCEPTED and self.reason is not None:
            raise ValueError("accepted decisions carry no reason")


@dataclass(frozen=True)
class RewriteResult:
    instance_id: str
    target_field: str
    original_span: str
    rewritten_span: str
    backend_name: str = ""


def render_rewriter_prompt(
    template: PromptTemplate, schema: TaskSchema, instance: Instance
) -> tuple[str, str]:
    validate_template(template, schema)
    return render(template, instance_values(instance, schema))


def _parse_rewrite(text: str) -> str:
    """The rewritten span follows the last `Rewritten:` marker line."""
    span = None
    for line in text.splitlines():
        if line.startswith(REWRITE_MARKER):
            span = line[len(REWRITE_MARKER) :].strip()
    if span is None:
        raise RewriteParseError(f"response has no {REWRITE_MARKER!r} line")
    if not span:
        raise RewriteParseError("rewritten span is empty")
    return span


def rewrite_instance(
    backend: Backend,
    template: PromptTemplate,
    schema: TaskSchema,
    instance: Instance,
    target_field: str,
    temperature: float = 0.0,
) -> RewriteResult:
    """One rewrite call. Raises BackendError or RewriteParseError on failure;
    build_corpus converts both into gate rejections."""
    if schema.role_of(target_field) != "rewritable_span":
        raise PipelineError(f"target field {target_field!r} is not a rewritable_span")
    system_text, user_text = render_rewriter_prompt(template, schema, instance)
    response = backend.send(
        ChatRequest(system_text=system_text, user_text=user_text, temperature=temperature)
    )
    return RewriteResult(
        instance_id=instance.id,
        target_field=target_field,
        original_span=instance.field_values[target_field],
        rewritten_span=_parse_rewrite(response.text),
        backend_name=response.backend_name,
    )


def render_judge_prompt(
    judge_template: PromptTemplate,
    schema: TaskSchema,
    original_instance: Instance,
    rewritten_span: str,
) -> tuple[str, str]:
    validate_template(judge_template, schema)
    values = instance_values(original_instance, schema)
    values["rewritten"] = rewritten_span
    return render(judge_template, values)


def parse_verdict_text(text: str) -> str:
    """Normalize to lowercase tokens (punctuation stripped); the contiguous
    sequence "not the same" wins over any bare "same"."""
    tokens = _NON_ALNUM_RE.sub(" ", text.lower()).split()
    for i in range(len(tokens) - 2):
        if tokens[i : i + 3] == ["not", "the", "same"]:
            return NOT_SAME
    if "same" in tokens:
        return SAME
    return UNPARSEABLE


def judge_pair(
    backend: Backend,
    judge_template: PromptTemplate,
    schema: TaskSchema,
    original_instance: Instance,
    rewritten_span: str,
) -> Verdict:
    """Total over backend behavior: a failed judge call yields an
    Unparseable verdict with the error recorded, never an exception."""
    system_text, user_text = render_judge_prompt(
        judge_template, schema, original_instance, rewritten_span
    )
    try:
        response = backend.send(ChatRequest(system_text=system_text, user_text=user_text))
    except BackendError as exc:
        return Verdict(value=UNPARSEABLE, raw_text="", error=str(exc))
    return Verdict(value=parse_verdict_text(response.text), raw_text=response.text)


def rejection_gate(
    verdict: Verdict, original_instance: Instance, rewrite: RewriteResult
) -> tuple[Instance, GateDecision]:
    """Same -> replace the target field; anything else reinstates the
    original unchanged. Total over all verdicts."""
    if rewrite.instance_id != original_instance.id:
        raise PipelineError(
            f"rewrite {rewrite.instance_id!r} does not target instance {original_instance.id!r}"
        )
    if verdict.value == SAME:
        out = original_instance.with_field(rewrite.target_field, rewrite.rewritten_span)
        return out, GateDecision(value=ACCEPTED)
    if verdict.error is not None:
        reason = "backend_error"
    elif verdict.value == NOT_SAME:
        reason = "judge_not_same"
    else:
        reason = "unparseable"
    return original_instance, GateDecision(value=REJECTED_KEPT_ORIGINAL, reason=reason)


@dataclass(frozen=True)
class GateRecord:
    instance_id: str
    target_field: str
    decision: str
    reason: str | None
    verdict: str
    attempts: int
    original_span: str
    candidate_span: str | None  # last rewrite candidate, None if rewriting failed

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "target_field": self.target_field,
            "decision": self.decision,
            "reason": self.reason,
            "verdict": self.verdict,
            "attempts": self.attempts,
            "original_span": self.original_span,
            "candidate_span": self.candidate_span,
        }


@dataclass(frozen=True)
class PipelineReport:
    records: tuple[GateRecord, ...]
    rewriter_template_name: str
    rewriter_template_version: int
    judge_template_name: str
    judge_template_version: int

    @property
    def total(self) -> int:
        return len(self.records)

    @property
    def accepted(self) -> int:
        return sum(1 for r in self.records if r.decision == ACCEPTED)

    @property
    def rewriter_accuracy(self) -> float:
        return self.accepted / self.total

    def summary(self) -> dict:
        return {
            "total": self.total,
            "accepted": self.accepted,
            "rejected": self.total - self.accepted,
            "rewriter_accuracy": self.rewriter_accuracy,
            "rewriter_template_name": self.rewriter_template_name,
            "rewriter_template_version": self.rewriter_template_version,
            "judge_template_name": self.judge_template_name,
            "judge_template_version": self.judge_template_version,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) for r in self.records]
        lines.append(json.dumps({"summary": self.summary()}, sort_keys=True, ensure_ascii=False))
        return "".join(line + "\n" for line in lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def build_corpus(
    backend: Backend,
    rewriter_template: PromptTemplate,
    judge_template: PromptTemplate,
    dataset: Dataset,
    retries: int = 0,
    judge_backend: Backend | None = None,
    target_field: str | None = None,
    temperature: float = 0.0,
    max_error_fraction: float = 0.05,
) -> tuple[Dataset, PipelineReport]:
    """One rewrite-judge-gate pass over the train split in sorted-id order.

    Dev and test instances pass through untouched (a dataset without a split
    assignment is treated as all train). On rejection, up to ``retries``
    fresh attempts are made before the original is reinstated. Individual
    failures degrade to rejections; the run aborts only when backend errors
    hit more than ``max_error_fraction`` of the instances. The output always
    passes align_check against the input.
    """
    schema = dataset.schema
    if judge_backend is None:
        judge_backend = backend
    if target_field is None:
        target_field = schema.rewritable_fields[0]
    if schema.role_of(target_field) != "rewritable_span":
        raise PipelineError(f"target field {target_field!r} is not a rewritable_span")
    validate_template(rewriter_template, schema)
    validate_template(judge_template, schema)

    by_id = dataset.by_id()
    if dataset.split_assignment is None:
        target_ids = sorted(by_id)
    else:
        target_ids = dataset.split_ids("train")
    if not target_ids:
        raise PipelineError("no train instances to rewrite")

    out_by_id = dict(by_id)
    records = []
    backend_errors = 0
    for inst_id in target_ids:
        instance = by_id[inst_id]
        decision = None
        verdict = None
        candidate = None
        attempts = 0
        for _ in range(retries + 1):
            attempts += 1
            try:
                result = rewrite_instance(
                    backend, rewriter_template, schema, instance, target_field, temperature
                )
            except BackendError as exc:
                verdict = Verdict(value=UNPARSEABLE, raw_text="", error=str(exc))
                candidate = None
                output, decision = instance, GateDecision(
                    value=REJECTED_KEPT_ORIGINAL, reason="backend_error"
                )
                continue
            except RewriteParseError:
                verdict = Verdict(value=UNPARSEABLE, raw_text="")
                candidate = None
                output, decision = instance, GateDecision(
                    value=REJECTED_KEPT_ORIGINAL, reason="unparseable"
                )
                continue
            candidate = result.rewritten_span
            verdict = judge_pair(
                judge_backend, judge_template, schema, instance, result.rewritten_span
            )
            output, decision = rejection_gate(verdict, instance, result)
            if decision.value == ACCEPTED:
                break
        if decision.reason == "backend_error":
            backend_errors += 1
        out_by_id[inst_id] = output
        records.append(
            GateRecord(
                instance_id=inst_id,
                target_field=target_field,
                decision=decision.value,
                reason=decision.reason,
                verdict=verdict.value,
                attempts=attempts,
                original_span=instance.field_values[target_field],
                candidate_span=candidate,
            )
        )

    if backend_errors > max_error_fraction * len(target_ids):
        raise PipelineError(
            f"backend errors on {backend_errors}/{len(target_ids)} instances "
            f"exceed the permitted fraction {max_error_fraction}"
        )

    rephrased = Dataset(
        schema=schema,
        instances=tuple(out_by_id[inst.id] for inst in dataset.instances),
        split_assignment=dataset.split_assignment,
    )
    align_check(dataset, rephrased)
    report = PipelineReport(
        records=tuple(records),
        rewriter_template_name=rewriter_template.name,
        rewriter_template_version=rewriter_template.version,
        judge_template_name=judge_template.name,
        judge_template_version=judge_template.version,
    )
    return rephrased, report


def assemble_few_shot(
    zero_shot_template: PromptTemplate,
    candidates,
    annotations: dict[str, Annotation],
    max_exemplars: int = 20,
) -> PromptTemplate:
    """Insert human-approved rewrite candidates as few-shot exemplars, in
    candidate order, bumping the template version. Every candidate must be
    annotated."""
    candidates = list(candidates)
    seen = set()
    for c in candidates:
        if c.instance_id in seen:
            raise PipelineError(f"duplicate candidate id {c.instance_id!r}")
        seen.add(c.instance_id)
        if c.instance_id not in annotations:
            raise PipelineError(f"candidate {c.instance_id!r} has no annotation")
    exemplars = [
        FewShotExemplar(original_span=c.original_span, rewritten_span=c.rewritten_span)
        for c in candidates
        if annotations[c.instance_id].decision == "approve"
    ]
    return zero_shot_template.with_exemplars(exemplars, max_exemplars=max_exemplars)


def save_candidates(candidates, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in candidates:
            rec = {
                "instance_id": c.instance_id,
                "target_field": c.target_field,
                "original_span": c.original_span,
                "rewritten_span": c.rewritten_span,
                "backend_name": c.backend_name,
            }
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def load_candidates(path) -> list[RewriteResult]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(
                    RewriteResult(
                        instance_id=rec["instance_id"],
                        target_field=rec["target_field"],
                        original_span=rec["original_span"],
                        rewritten_span=rec["rewritten_span"],
                        backend_name=rec.get("backend_name", ""),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise PipelineError(f"candidate line {lineno}: {exc!r}") from exc
    return out
