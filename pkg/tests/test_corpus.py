import json

import pytest
from hypothesis import given, strategies as st

from clinex import appendix, corpus
from clinex.core import Snippet, Status, TaskKind

PT = corpus.SenseInventory({"PT": ["physical therapy", "prothrombin time"]})


def _write(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def test_load_three_snippets(tmp_path):
    path = _write(tmp_path / "s.jsonl", [{"id": "a", "text": "x"}, {"id": "b", "text": "y", "side": "PT"},
                                         {"id": "c", "text": "z"}])
    snippets = corpus.load_snippets(path)
    assert [s.id for s in snippets] == ["a", "b", "c"] and snippets[1].side == "PT"


def test_duplicate_id_names_both_lines(tmp_path):
    path = _write(tmp_path / "s.jsonl", [{"id": "a", "text": "x"}, {"id": "b", "text": "y"}, {"id": "a", "text": "z"}])
    with pytest.raises(corpus.DuplicateId) as err:
        corpus.load_snippets(path)
    assert err.value.lines == (1, 3)


@pytest.mark.parametrize("row, field", [({"id": "a"}, "text"), ({"id": "a", "text": ""}, "text"),
                                        ({"text": "x"}, "id"), ({"id": "a", "text": 3}, "text")])
def test_snippet_schema_errors(tmp_path, row, field):
    path = _write(tmp_path / "s.jsonl", [{"id": "ok", "text": "x"}, row])
    with pytest.raises(corpus.SchemaError) as err:
        corpus.load_snippets(path)
    assert err.value.line == 2 and err.value.field == field


def test_gold_status_closed_enum(tmp_path):
    path = _write(tmp_path / "g.jsonl", [{"id": "a", "meds": [{"name": "Kadian", "status": "paused"}]}])
    with pytest.raises(corpus.SchemaError) as err:
        corpus.load_gold(path, TaskKind.MEDICATION_STATUS)
    assert err.value.field == "meds.status"
    _write(path, [{"id": "a", "meds": [{"name": "Kadian", "status": "Active"}]}])
    assert corpus.load_gold(path, "med_status").entries["a"].items == (("Kadian", Status.ACTIVE),)


def test_gold_wrong_task(tmp_path):
    path = _write(tmp_path / "g.jsonl", [{"id": "a", "arms": ["x"]}])
    with pytest.raises(corpus.SchemaError, match="coref gold file"):
        corpus.load_gold(path, TaskKind.COREFERENCE)


def test_gold_invalid_bio_and_length(tmp_path):
    path = _write(tmp_path / "g.jsonl", [{"id": "a", "tokens": ["x", "y"], "labels": ["O", "I-dosage"]}])
    with pytest.raises(corpus.SchemaError):
        corpus.load_gold(path, TaskKind.MED_ATTR_PHRASE)
    _write(path, [{"id": "a", "tokens": ["x", "y"], "labels": [0]}])
    with pytest.raises(corpus.SchemaError):
        corpus.load_gold(path, TaskKind.EVIDENCE_TOKENS)


def test_sense_gold_label_forms(tmp_path):
    path = _write(tmp_path / "g.jsonl", [
        {"id": "a", "acronym": "PT", "candidates": ["physical therapy", "prothrombin time"], "label": "prothrombin time"},
        {"id": "b", "acronym": "PT", "candidates": ["physical therapy", "prothrombin time"], "label": 0},
    ])
    gold = corpus.load_gold(path, TaskKind.SENSE_DISAMBIGUATION)
    assert gold.entries["a"].index == 1 and gold.entries["b"].index == 0


def test_inventory_invariants(tmp_path):
    with pytest.raises(ValueError):
        corpus.SenseInventory({"PT": []})
    with pytest.raises(ValueError):
        corpus.SenseInventory({"PT": ["Physical therapy", "physical THERAPY"]})
    corpus.write_inventory(PT, tmp_path / "inv.json")
    assert corpus.load_inventory(tmp_path / "inv.json").senses == PT.senses


@pytest.mark.parametrize("task", [t for t in TaskKind if appendix.gold_file(appendix.FIXTURE_DIR, t).exists()])
def test_gold_byte_stable_round_trip(task, tmp_path):
    src = appendix.gold_file(appendix.FIXTURE_DIR, task)
    gold = corpus.load_gold(src, task)
    corpus.write_gold(gold, tmp_path / "g.jsonl")
    assert (tmp_path / "g.jsonl").read_bytes() == src.read_bytes()


def test_snippets_and_inventory_byte_stable(tmp_path):
    for task in TaskKind:
        src = appendix.snippet_file(appendix.FIXTURE_DIR, task)
        if src.exists():
            corpus.write_snippets(corpus.load_snippets(src), tmp_path / "s.jsonl")
            assert (tmp_path / "s.jsonl").read_bytes() == src.read_bytes()
    inv = appendix.FIXTURE_DIR / "inventory.json"
    corpus.write_inventory(corpus.load_inventory(inv), tmp_path / "i.json")
    assert (tmp_path / "i.json").read_bytes() == inv.read_bytes()


@given(st.lists(st.tuples(st.text(min_size=1, max_size=20), st.text(max_size=5)), max_size=5, unique_by=lambda t: t[0]))
def test_snippet_round_trip_property(rows):
    import tempfile
    from pathlib import Path
    snippets = [Snippet(f"id{i}", text, side) for i, (text, side) in enumerate(rows)]
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "s.jsonl"
        corpus.write_snippets(snippets, path)
        first = path.read_bytes()
        loaded = corpus.load_snippets(path)
        assert loaded == snippets
        corpus.write_snippets(loaded, path)
        assert path.read_bytes() == first


# --- reverse substitution ----------------------------------------------------

def test_reverse_substitute_physical_therapy():
    [d] = corpus.reverse_substitute([Snippet("s1", "referred to physical therapy today")], PT)
    assert d.snippet.text == "referred to PT today"
    assert d.label == "physical therapy" and d.candidates == ("physical therapy", "prothrombin time")
    assert d.snippet.id == "s1@12" and d.label_index == 0
    assert d.reconstruct() == "referred to physical therapy today"


def test_reverse_substitute_no_expansion():
    assert corpus.reverse_substitute([Snippet("s", "nothing here")], PT) == []


def test_reverse_substitute_two_expansions():
    inv = corpus.SenseInventory({"PT": ["physical therapy"], "RA": ["right atrium"]})
    src = Snippet("s", "Physical therapy after the right atrium repair.")
    got = corpus.reverse_substitute([src], inv)
    assert [d.snippet.text for d in got] == ["PT after the right atrium repair.",
                                             "Physical therapy after the RA repair."]
    assert [d.label for d in got] == ["Physical therapy", "right atrium"]
    assert corpus.round_trip_violations(got, {"s": src}) == []


def test_reverse_substitute_word_boundaries_and_longest_first():
    inv = corpus.SenseInventory({"A": ["art"], "PA": ["pulmonary artery"], "P": ["pulmonary"]})
    text = "heart art; pulmonary artery and pulmonary2"
    got = corpus.reverse_substitute([Snippet("s", text)], inv)
    assert [(d.acronym, d.label) for d in got] == [("A", "art"), ("PA", "pulmonary artery")]


def test_reverse_substitute_multibyte_offsets_and_repeats():
    src = Snippet("s", "café physical therapy, then physical therapy")
    got = corpus.reverse_substitute([src], PT)
    assert [d.offset for d in got] == [6, 29]
    assert all(d.reconstruct() == src.text for d in got)
    assert all(d.snippet.text.count("PT") == 1 for d in got)


def test_reverse_substitute_sampling_is_seeded():
    src = [Snippet(f"s{i}", "physical therapy " * 3) for i in range(5)]
    a = corpus.reverse_substitute(src, PT, seed=7, sample=4)
    b = corpus.reverse_substitute(src, PT, seed=7, sample=4)
    assert a == b and len(a) == 4


def test_derived_file_round_trip(tmp_path):
    got = corpus.reverse_substitute([Snippet("s", "PT: physical therapy")], PT)
    corpus.write_derived(got, tmp_path / "d.jsonl")
    assert corpus.load_derived(tmp_path / "d.jsonl") == got


def test_round_trip_violation_detected():
    src = Snippet("s", "physical therapy")
    [d] = corpus.reverse_substitute([src], PT)
    broken = corpus.DerivedExample(d.snippet, d.acronym, d.label, d.candidates, d.offset + 1, d.source_id)
    assert corpus.round_trip_violations([broken], {"s": src})


@given(st.lists(st.sampled_from(["physical therapy", "Prothrombin Time", "x", "café", "PT", "therapy,"]),
                max_size=10))
def test_reverse_substitute_round_trip_property(words):
    text = " ".join(words) or "empty"
    src = Snippet("s", text)
    got = corpus.reverse_substitute([src], PT)
    assert len(got) == sum(1 for w in words if w.casefold() in ("physical therapy", "prothrombin time"))
    assert corpus.round_trip_violations(got, {"s": src}) == []
    for d in got:
        raw = d.snippet.text.encode("utf-8")
        assert raw[d.offset:].startswith(d.acronym.encode("utf-8"))
