import pytest
from hypothesis import given, strategies as st

from clinex.core import (
    Choice,
    MedAttrRecords,
    MedRecord,
    MedStatusList,
    Snippet,
    Span,
    SpanList,
    Status,
    TaskKind,
    TokenLabels,
    bio_violations,
    output_from_json,
    output_to_json,
    span_text,
    token_surfaces,
    tokenize,
    validate_output,
)

texts = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=60)


@pytest.mark.parametrize("text, expected", [
    ("Tylenol twice daily", ["Tylenol", "twice", "daily"]),
    ("", []),
    ("q.d. (daily)", ["q.d", ".", "(", "daily", ")"]),
    ("every 4-6 hours", ["every", "4-6", "hours"]),
    ("mg/dL", ["mg/dL"]),
    ('"(IF)."', ['"', "(", "IF", ")", ".", '"']),
    ("...", [".", ".", "."]),
])
def test_tokenize_examples(text, expected):
    assert token_surfaces(text) == expected


def test_token_offsets_are_bytes():
    toks = tokenize("300µg Δ x")
    assert [(t.char_start, t.char_end) for t in toks] == [(0, 6), (7, 9), (10, 11)]


@given(texts)
def test_tokens_slice_ordered_nonoverlapping(text):
    toks = tokenize(text)
    prev_end = 0
    for t in toks:
        assert t.char_start < t.char_end
        assert t.char_start >= prev_end
        assert span_text(text, t.char_start, t.char_end) == t.surface
        prev_end = t.char_end


@given(texts)
def test_tokens_plus_whitespace_reconstruct_text(text):
    raw = text.encode("utf-8")
    toks = tokenize(text)
    pos = 0
    for t in toks:
        assert raw[pos:t.char_start].decode("utf-8").strip() == ""
        pos = t.char_end
    assert raw[pos:].decode("utf-8").strip() == ""


@given(texts)
def test_tokenize_idempotent_on_surfaces(text):
    for t in tokenize(text):
        assert token_surfaces(t.surface) == [t.surface]


def test_status_parse_is_case_insensitive_and_closed():
    assert Status.parse(" Active ") is Status.ACTIVE
    assert Status.parse("DISCONTINUED") is Status.DISCONTINUED
    with pytest.raises(ValueError):
        Status.parse("paused")
    assert len(Status) == 3


def test_snippet_needs_text():
    with pytest.raises(ValueError):
        Snippet("x", "")


def test_task_parse():
    assert TaskKind.parse("arms") is TaskKind.ARM_IDENTIFICATION
    assert TaskKind.parse("coreference") is TaskKind.COREFERENCE
    with pytest.raises(ValueError):
        TaskKind.parse("nope")


FIVE = Snippet("s", "one two three four five")


def test_validate_output_examples():
    assert validate_output(TaskKind.EVIDENCE_TOKENS, TokenLabels((0, 1, 0, 0, 1)), FIVE) == []
    assert "length mismatch" in validate_output(TaskKind.EVIDENCE_TOKENS, TokenLabels((0, 1, 0, 0)), FIVE)[0]
    got = validate_output(TaskKind.SENSE_DISAMBIGUATION, Choice(3), FIVE, ["a", "b", "c"])
    assert "index out of range" in got[0]


def test_validate_output_other_violations():
    assert validate_output(TaskKind.EVIDENCE_TOKENS, TokenLabels((0, 1, 0, 0, 2)), FIVE)
    assert validate_output(TaskKind.MED_ATTR_PHRASE, TokenLabels(("O", "I-dosage", "O", "O", "O")), FIVE)
    assert validate_output(TaskKind.MEDICATION_STATUS, MedStatusList((("x", "paused"),)), FIVE)
    assert validate_output(TaskKind.MED_ATTR_RELATION, MedAttrRecords((MedRecord("x", dosage=()),)), FIVE)
    assert validate_output(TaskKind.ARM_IDENTIFICATION, SpanList(("a", " ")), FIVE)
    assert "wrong output type" in validate_output(TaskKind.COREFERENCE, Choice(0), FIVE)[0]


def test_bio_violations():
    assert bio_violations(["B-dosage", "I-dosage", "O", "I-route", "B-route", "I-dosage"]) == [3, 5]
    assert bio_violations([]) == []


@pytest.mark.parametrize("out", [
    Choice(2),
    TokenLabels((0, 1)),
    TokenLabels(("B-dosage", "O")),
    Span("her MS"),
    SpanList(("Placebo", "Indacaterol (300 µg)")),
    MedStatusList((("Kadian", Status.ACTIVE), ("Dilaudid", Status.DISCONTINUED))),
    MedAttrRecords((MedRecord("Albuterol", dosage=("2 puffs",), duration=("as needed",)),)),
])
def test_output_json_round_trip(out):
    assert output_from_json(output_to_json(out)) == out


def test_diagnostics_do_not_affect_equality():
    assert Choice(1, {"overlap": 4}) == Choice(1)
