import pytest

from zotune.data import FieldSpec, Instance, TaskSchema, builtin_schemas
from zotune.templates import (
    Annotation,
    FewShotExemplar,
    PromptTemplate,
    TemplateError,
    canonical_slots,
    format_template,
    instance_values,
    load_annotations,
    parse_template,
    render,
    save_annotations,
    schema_description,
    template_transfer,
    validate_template,
)

REWRITER_TEXT = """\
name: toy_rewriter
version: 1
schema: toy

[section: task_description]
Rewrite the premise without changing its meaning.
[section: method_summary]
Keep the answer implied by the premise identical.
[section: requirements]
Reply with a single line starting with "Rewritten:".
[section: few_shot_module]

[section: instance_slots]
hypothesis: {{hypothesis}}
Answer: {{label}}
Original: {{premise}}
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


def toy_instance():
    return Instance(
        id="ex_001",
        field_values={"premise": "the cat sat", "hypothesis": "a cat exists"},
        label=0,
    )


class TestParseFormat:
    def test_parse_reads_metadata_and_sections(self):
        t = parse_template(REWRITER_TEXT)
        assert (t.name, t.version, t.schema_name) == ("toy_rewriter", 1, "toy")
        assert [k for k, _ in t.sections] == [
            "task_description",
            "method_summary",
            "requirements",
            "few_shot_module",
            "instance_slots",
        ]

    def test_format_parse_identity(self):
        t = parse_template(REWRITER_TEXT)
        assert format_template(t) == REWRITER_TEXT
        assert parse_template(format_template(t)) == t

    def test_unknown_metadata_key_rejected(self):
        with pytest.raises(TemplateError, match="unknown key"):
            parse_template("name: x\nversion: 1\nschema: s\nauthor: me\n\n[section: requirements]\n")

    def test_missing_metadata_rejected(self):
        with pytest.raises(TemplateError, match="missing metadata"):
            parse_template("name: x\nversion: 1\n\n[section: requirements]\n")

    def test_non_integer_version_rejected(self):
        with pytest.raises(TemplateError, match="integer"):
            parse_template("name: x\nversion: one\nschema: s\n\n[section: requirements]\n")

    def test_unknown_section_kind_rejected(self):
        with pytest.raises(TemplateError, match="unknown section kind"):
            parse_template("name: x\nversion: 1\nschema: s\n\n[section: preamble]\nhi\n")

    def test_no_sections_rejected(self):
        with pytest.raises(TemplateError, match="no sections"):
            parse_template("name: x\nversion: 1\nschema: s\n")

    def test_duplicate_instance_slots_rejected(self):
        text = (
            "name: x\nversion: 1\nschema: s\n\n"
            "[section: instance_slots]\na\n[section: instance_slots]\nb\n"
        )
        with pytest.raises(TemplateError, match="at most one"):
            parse_template(text)


class TestValidate:
    def test_valid_template_passes(self):
        validate_template(parse_template(REWRITER_TEXT), toy_schema())

    def test_schema_name_mismatch(self):
        t = parse_template(REWRITER_TEXT.replace("schema: toy", "schema: other"))
        with pytest.raises(TemplateError, match="schema"):
            validate_template(t, toy_schema())

    def test_unknown_slot_field(self):
        t = parse_template(REWRITER_TEXT.replace("{{hypothesis}}", "{{hypotheses}}"))
        with pytest.raises(TemplateError, match="hypotheses"):
            validate_template(t, toy_schema())

    def test_missing_instance_slots(self):
        text = "name: x\nversion: 1\nschema: toy\n\n[section: requirements]\nplain\n"
        with pytest.raises(TemplateError, match="instance_slots"):
            validate_template(parse_template(text), toy_schema())

    def test_must_reference_rewritable_field(self):
        t = parse_template(
            REWRITER_TEXT.replace("Original: {{premise}}", "Original: {{hypothesis}}")
        )
        with pytest.raises(TemplateError, match="rewritable"):
            validate_template(t, toy_schema())

    def test_rewritten_placeholder_is_reserved(self):
        text = REWRITER_TEXT.replace(
            "Original: {{premise}}", "Original: {{premise}}\nRewritten: {{rewritten}}"
        )
        validate_template(parse_template(text), toy_schema())


class TestRender:
    def test_system_and_user_split(self):
        t = parse_template(REWRITER_TEXT)
        values = instance_values(toy_instance(), toy_schema())
        system_text, user_text = render(t, values)
        assert "Rewrite the premise" in system_text
        assert "Keep the answer" in system_text
        assert 'starting with "Rewritten:"' in system_text
        assert user_text == "hypothesis: a cat exists\nAnswer: yes\nOriginal: the cat sat"

    def test_unresolved_placeholder_names_field_and_section(self):
        t = parse_template(REWRITER_TEXT)
        with pytest.raises(TemplateError, match=r"premise.*instance_slots"):
            render(t, {"hypothesis": "h", "label": "yes"})

    def test_substitution_is_single_pass(self):
        t = parse_template(REWRITER_TEXT)
        values = {"premise": "literal {{hypothesis}} stays", "hypothesis": "h", "label": "no"}
        _, user_text = render(t, values)
        assert "literal {{hypothesis}} stays" in user_text

    def test_only_approved_exemplars_render(self):
        t = parse_template(REWRITER_TEXT).with_exemplars(
            [
                FewShotExemplar("one", "uno"),
                FewShotExemplar("two", "dos", approved=False),
                FewShotExemplar("three", "tres"),
            ]
        )
        _, user_text = render(t, instance_values(toy_instance(), toy_schema()))
        assert "Original: one\nRewritten: uno" in user_text
        assert "dos" not in user_text
        assert "Original: three\nRewritten: tres" in user_text

    def test_exemplar_answer_line(self):
        block = FewShotExemplar("o", "r", answer="same").render_block()
        assert block == "Original: o\nRewritten: r\nAnswer: same"


class TestWithExemplars:
    def test_version_bumps(self):
        t = parse_template(REWRITER_TEXT)
        t2 = t.with_exemplars([FewShotExemplar("a", "b")])
        assert t2.version == t.version + 1
        assert len(t2.exemplars) == 1

    def test_cap_enforced(self):
        t = parse_template(REWRITER_TEXT)
        exemplars = [FewShotExemplar(f"o{i}", f"r{i}") for i in range(21)]
        with pytest.raises(TemplateError, match="exceeds"):
            t.with_exemplars(exemplars)
        assert len(t.with_exemplars(exemplars[:20]).exemplars) == 20

    def test_round_trips_through_text(self):
        t = parse_template(REWRITER_TEXT).with_exemplars(
            [FewShotExemplar("a", "b"), FewShotExemplar("c", "d", approved=False)]
        )
        again = parse_template(format_template(t))
        assert again.exemplars == t.exemplars


class TestCanonicalSlots:
    def test_rewriter_style_ends_with_original(self):
        slots = canonical_slots(toy_schema())
        assert slots.splitlines() == [
            "hypothesis: {{hypothesis}}",
            "Answer: {{label}}",
            "Original: {{premise}}",
        ]

    def test_judge_style_has_rewritten(self):
        slots = canonical_slots(toy_schema(), style="judge")
        assert slots.splitlines()[-2:] == ["Original: {{premise}}", "Rewritten: {{rewritten}}"]

    def test_bad_target_rejected(self):
        with pytest.raises(TemplateError):
            canonical_slots(toy_schema(), target_field="hypothesis")

    def test_schema_description_mentions_all_fields(self):
        desc = schema_description(toy_schema())
        for name in ("premise", "hypothesis", "label", "yes", "no"):
            assert name in desc


class TestTransfer:
    def test_same_schema_only_clears_few_shot(self):
        t = parse_template(REWRITER_TEXT).with_exemplars([FewShotExemplar("a", "b")])
        moved = template_transfer(t, toy_schema())
        assert moved.exemplars == ()
        assert moved.version == t.version
        assert moved.section_text("task_description") == t.section_text("task_description")
        assert moved.section_text("instance_slots") == t.section_text("instance_slots")

    def test_new_schema_regenerates_slots_keeps_method_summary(self):
        t = parse_template(REWRITER_TEXT).with_exemplars([FewShotExemplar("a", "b")])
        target = builtin_schemas()["copa_like"]
        moved = template_transfer(t, target)
        assert moved.schema_name == "copa_like"
        assert moved.exemplars == ()
        assert moved.section_text("method_summary") == t.section_text("method_summary")
        assert moved.section_text("requirements") == t.section_text("requirements")
        assert moved.section_text("instance_slots") == canonical_slots(target)
        assert moved.section_text("task_description") == schema_description(target)
        validate_template(moved, target)

    def test_judge_style_survives_transfer(self):
        judge_text = REWRITER_TEXT.replace(
            "Answer: {{label}}\nOriginal: {{premise}}",
            "Original: {{premise}}\nRewritten: {{rewritten}}",
        )
        t = parse_template(judge_text)
        moved = template_transfer(t, builtin_schemas()["nli_pair"])
        assert "Rewritten: {{rewritten}}" in moved.section_text("instance_slots")


class TestAnnotations:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        save_annotations(
            [Annotation("c1", "approve"), Annotation("c2", "reject", note="drops the subject")],
            path,
        )
        loaded = load_annotations(path)
        assert set(loaded) == {"c1", "c2"}
        assert loaded["c2"].note == "drops the subject"

    def test_bad_decision_rejected(self):
        with pytest.raises(TemplateError):
            Annotation("c1", "maybe")

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        path.write_text(
            '{"candidate_id": "c1", "decision": "approve"}\n'
            '{"candidate_id": "c1", "decision": "reject"}\n',
            encoding="utf-8",
        )
        with pytest.raises(TemplateError, match="duplicate"):
            load_annotations(path)
