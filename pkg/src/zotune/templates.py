"""Sectioned prompt templates with `{{field}}` slots and few-shot exemplars.

Asset format: a metadata header (name, version, schema) followed by
`[section: <kind>]` blocks. Section kinds are fixed: task_description,
method_summary, requirements, few_shot_module, instance_slots. The
few_shot_module body holds one JSON exemplar per line; everything else is
plain text with placeholders. Substitution is single pass, so field values
containing `{{` render verbatim.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

from .data import TaskSchema

__all__ = [
    "TemplateError",
    "SECTION_KINDS",
    "RESERVED_PLACEHOLDERS",
    "DEFAULT_MAX_EXEMPLARS",
    "FewShotExemplar",
    "PromptTemplate",
    "Annotation",
    "parse_template",
    "format_template",
    "load_template",
    "save_template",
    "validate_template",
    "render",
    "instance_values",
    "schema_description",
    "canonical_slots",
    "template_transfer",
    "load_annotations",
    "save_annotations",
]

SECTION_KINDS = (
    "task_description",
    "method_summary",
    "requirements",
    "few_shot_module",
    "instance_slots",
)
SYSTEM_SECTIONS = ("task_description", "method_summary", "requirements")
# placeholders allowed beyond the schema's field names (judge prompts embed
# the candidate rewrite, which is not an instance field)
RESERVED_PLACEHOLDERS = ("rewritten",)
DEFAULT_MAX_EXEMPLARS = 20

_HEADER_RE = re.compile(r"^\[section: ([a-z_]+)\]$")
_PLACEHOLDER_RE = re.compile(r"\{\{([A-Za-z0-9_]+)\}\}")
_METADATA_KEYS = ("name", "version", "schema")


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class FewShotExemplar:
    original_span: str
    rewritten_span: str
    approved: bool = True
    answer: str | None = None  # judge exemplars carry the expected verdict

    def to_record(self) -> dict:
        rec = {
            "approved": self.approved,
            "original": self.original_span,
            "rewritten": self.rewritten_span,
        }
        if self.answer is not None:
            rec["answer"] = self.answer
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "FewShotExemplar":
        return cls(
            original_span=rec["original"],
            rewritten_span=rec["rewritten"],
            approved=bool(rec.get("approved", True)),
            answer=rec.get("answer"),
        )

    def render_block(self) -> str:
        lines = [f"Original: {self.original_span}", f"Rewritten: {self.rewritten_span}"]
        if self.answer is not None:
            lines.append(f"Answer: {self.answer}")
        return "\n".join(lines)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    version: int
    schema_name: str
    sections: tuple[tuple[str, str], ...]  # (kind, text), order preserved

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple((k, t) for k, t in self.sections))
        if self.version < 1:
            raise TemplateError(f"version must be >= 1, got {self.version}")
        for kind, text in self.sections:
            if kind not in SECTION_KINDS:
                raise TemplateError(f"unknown section kind {kind!r}")
            for line in text.split("\n"):
                if _HEADER_RE.match(line):
                    raise TemplateError(f"section text may not contain a header line: {line!r}")
        counts = [k for k, _ in self.sections]
        for kind in ("few_shot_module", "instance_slots"):
            if counts.count(kind) > 1:
                raise TemplateError(f"at most one {kind} section allowed")

    def section_text(self, kind: str) -> str | None:
        for k, text in self.sections:
            if k == kind:
                return text
        return None

    def placeholders(self, kind: str | None = None) -> set[str]:
        names: set[str] = set()
        for k, text in self.sections:
            if k == "few_shot_module":
                continue
            if kind is None or k == kind:
                names.update(_PLACEHOLDER_RE.findall(text))
        return names

    @property
    def exemplars(self) -> tuple[FewShotExemplar, ...]:
        text = self.section_text("few_shot_module")
        if not text:
            return ()
        out = []
        for lineno, line in enumerate(text.split("\n"), start=1):
            if not line.strip():
                continue
            try:
                out.append(FewShotExemplar.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TemplateError(f"few_shot_module line {lineno}: {exc!r}") from exc
        return tuple(out)

    def with_exemplars(
        self,
        exemplars,
        max_exemplars: int = DEFAULT_MAX_EXEMPLARS,
        bump_version: bool = True,
    ) -> "PromptTemplate":
        exemplars = tuple(exemplars)
        if len(exemplars) > max_exemplars:
            raise TemplateError(
                f"{len(exemplars)} exemplars exceeds the maximum of {max_exemplars}"
            )
        body = "\n".join(json.dumps(e.to_record(), sort_keys=True, ensure_ascii=False) for e in exemplars)
        sections = []
        seen = False
        for kind, text in self.sections:
            if kind == "few_shot_module":
                sections.append((kind, body))
                seen = True
            else:
                sections.append((kind, text))
        if not seen:
            sections.append(("few_shot_module", body))
        return replace(
            self,
            sections=tuple(sections),
            version=self.version + 1 if bump_version else self.version,
        )


def parse_template(text: str) -> PromptTemplate:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # trailing newline
    meta: dict[str, str] = {}
    i = 0
    while i < len(lines) and not _HEADER_RE.match(lines[i]):
        line = lines[i]
        i += 1
        if not line.strip():
            continue
        if ":" not in line:
            raise TemplateError(f"metadata line {i}: expected 'key: value', got {line!r}")
        key, _, value = line.partition(":")
        key = key.strip()
        if key not in _METADATA_KEYS:
            raise TemplateError(f"metadata line {i}: unknown key {key!r}")
        meta[key] = value.strip()
    missing = set(_METADATA_KEYS) - set(meta)
    if missing:
        raise TemplateError(f"missing metadata: {sorted(missing)}")
    try:
        version = int(meta["version"])
    except ValueError as exc:
        raise TemplateError(f"version must be an integer, got {meta['version']!r}") from exc

    sections: list[tuple[str, str]] = []
    current_kind: str | None = None
    body: list[str] = []
    for line in lines[i:]:
        m = _HEADER_RE.match(line)
        if m:
            if current_kind is not None:
                sections.append((current_kind, "\n".join(body)))
            current_kind = m.group(1)
            body = []
        else:
            body.append(line)
    if current_kind is not None:
        sections.append((current_kind, "\n".join(body)))
    if not sections:
        raise TemplateError("template has no sections")
    return PromptTemplate(
        name=meta["name"],
        version=version,
        schema_name=meta["schema"],
        sections=tuple(sections),
    )


def format_template(template: PromptTemplate) -> str:
    parts = [
        f"name: {template.name}",
        f"version: {template.version}",
        f"schema: {template.schema_name}",
        "",
    ]
    for kind, text in template.sections:
        parts.append(f"[section: {kind}]")
        parts.append(text)
    return "\n".join(parts) + "\n"


def load_template(path) -> PromptTemplate:
    return parse_template(Path(path).read_text(encoding="utf-8"))


def save_template(template: PromptTemplate, path) -> None:
    Path(path).write_text(format_template(template), encoding="utf-8")


def validate_template(template: PromptTemplate, schema: TaskSchema) -> None:
    """Check the template against its schema: matching schema name, slot
    placeholders drawn from the schema's fields (plus reserved names), and a
    present instance_slots section referencing at least one rewritable span."""
    if template.schema_name != schema.name:
        raise TemplateError(
            f"template targets schema {template.schema_name!r}, got {schema.name!r}"
        )
    slots = template.section_text("instance_slots")
    if slots is None:
        raise TemplateError("template has no instance_slots section")
    field_names = {f.name for f in schema.fields}
    allowed = field_names | set(RESERVED_PLACEHOLDERS)
    slot_names = set(_PLACEHOLDER_RE.findall(slots))
    unknown = slot_names - allowed
    if unknown:
        raise TemplateError(f"instance_slots references unknown fields: {sorted(unknown)}")
    if not slot_names & set(schema.rewritable_fields):
        raise TemplateError("instance_slots must reference a rewritable_span field")
    stray = template.placeholders() - allowed
    if stray:
        raise TemplateError(f"placeholders reference unknown fields: {sorted(stray)}")


def _substitute(text: str, values: Mapping[str, str], section: str) -> str:
    def repl(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            raise TemplateError(f"unresolved placeholder {{{{{name}}}}} in {section} section")
        return str(values[name])

    return _PLACEHOLDER_RE.sub(repl, text)


def render(template: PromptTemplate, values: Mapping[str, str]) -> tuple[str, str]:
    """Render to (system_text, user_text).

    Description, method summary, and requirements become the system text;
    approved few-shot exemplars and the instance slots become the user text.
    Substitution is a single pass over the template text only.
    """
    system_parts = []
    user_parts = []
    for kind, text in template.sections:
        if kind == "few_shot_module":
            blocks = [e.render_block() for e in template.exemplars if e.approved]
            if blocks:
                user_parts.append("\n\n".join(blocks))
        elif kind in SYSTEM_SECTIONS:
            system_parts.append(_substitute(text, values, kind))
        else:
            user_parts.append(_substitute(text, values, kind))
    return "\n\n".join(system_parts), "\n\n".join(user_parts)


def instance_values(instance, schema: TaskSchema) -> dict[str, str]:
    """Placeholder values for one instance: span texts plus the label name."""
    values = dict(instance.field_values)
    values[schema.label_field] = schema.label_space[instance.label]
    return values


def schema_description(schema: TaskSchema) -> str:
    lines = [f"Task schema: {schema.name}. Fields:"]
    for f in schema.fields:
        if f.role == "label":
            lines.append(f"- {f.name}: the class label, one of: {', '.join(schema.label_space)}.")
        elif f.role == "rewritable_span":
            lines.append(f"- {f.name}: a text span that may be rewritten.")
        else:
            lines.append(f"- {f.name}: a fixed text span that must not be changed.")
    return "\n".join(lines)


def canonical_slots(schema: TaskSchema, target_field: str | None = None, style: str = "rewriter") -> str:
    """Standard instance_slots block. The rewritable target renders last on
    an `Original:` line (the marker the rule rewriter extracts); rewriter
    style also exposes the correct answer, judge style the candidate rewrite."""
    if style not in ("rewriter", "judge"):
        raise TemplateError(f"style must be 'rewriter' or 'judge', got {style!r}")
    target = target_field or schema.rewritable_fields[0]
    if schema.role_of(target) != "rewritable_span":
        raise TemplateError(f"target field {target!r} is not a rewritable_span")
    lines = [f"{name}: {{{{{name}}}}}" for name in schema.span_fields if name != target]
    if style == "rewriter":
        lines.append(f"Answer: {{{{{schema.label_field}}}}}")
        lines.append(f"Original: {{{{{target}}}}}")
    else:
        lines.append(f"Original: {{{{{target}}}}}")
        lines.append("Rewritten: {{rewritten}}")
    return "\n".join(lines)


def template_transfer(template: PromptTemplate, new_schema: TaskSchema) -> PromptTemplate:
    """Port a template to a new schema: regenerate the schema description and
    instance slots for the new field names, clear the few-shot module (it
    must be rebuilt for the new task), keep method_summary bytes verbatim.

    Transfer to the template's own schema only clears the few-shot module.
    """
    if not new_schema.rewritable_fields:
        raise TemplateError(f"schema {new_schema.name!r} has no rewritable_span field")
    same_schema = new_schema.name == template.schema_name
    old_slots = template.section_text("instance_slots") or ""
    style = "judge" if "rewritten" in set(_PLACEHOLDER_RE.findall(old_slots)) else "rewriter"
    sections = []
    for kind, text in template.sections:
        if kind == "few_shot_module":
            sections.append((kind, ""))
        elif same_schema:
            sections.append((kind, text))
        elif kind == "task_description":
            sections.append((kind, schema_description(new_schema)))
        elif kind == "instance_slots":
            sections.append((kind, canonical_slots(new_schema, style=style)))
        else:
            sections.append((kind, text))
    return replace(template, schema_name=new_schema.name, sections=tuple(sections))


@dataclass(frozen=True)
class Annotation:
    candidate_id: str
    decision: str  # approve | reject
    note: str = ""

    def __post_init__(self):
        if self.decision not in ("approve", "reject"):
            raise TemplateError(f"decision must be approve or reject, got {self.decision!r}")


def save_annotations(annotations, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in annotations:
            rec = {"candidate_id": a.candidate_id, "decision": a.decision, "note": a.note}
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def load_annotations(path) -> dict[str, Annotation]:
    out: dict[str, Annotation] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                a = Annotation(
                    candidate_id=rec["candidate_id"],
                    decision=rec["decision"],
                    note=rec.get("note", ""),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TemplateError(f"annotation line {lineno}: {exc!r}") from exc
            if a.candidate_id in out:
                raise TemplateError(f"annotation line {lineno}: duplicate id {a.candidate_id!r}")
            out[a.candidate_id] = a
    return out
