import random

import pytest
from hypothesis import given, strategies as st

import oracles
from clinex import metrics
from clinex.core import MedRecord, MedStatusList, Status

A, D, N = Status.ACTIVE, Status.DISCONTINUED, Status.NEITHER


def meds(*pairs):
    return MedStatusList(tuple(pairs))


# --- grouped -------------------------------------------------------------------

def test_grouped_all_correct():
    r = metrics.grouped_accuracy_macro_f1({"1": 0, "2": 1, "3": 0}, {"1": 0, "2": 1, "3": 0},
                                          {"1": "x", "2": "x", "3": "y"})
    assert r.overall.accuracy == r.overall.macro_f1 == 1.0
    assert all(g.accuracy == g.macro_f1 == 1.0 for g in r.per_group.values())


def test_grouped_hand_case():
    r = metrics.grouped_accuracy_macro_f1({"1": "a", "2": "a"}, {"1": "a", "2": "b"}, lambda _: "g")
    assert r.overall.accuracy == 0.5
    assert r.overall.macro_f1 == pytest.approx(1 / 3, abs=1e-12)


def test_grouped_overall_is_unweighted_mean():
    # groups of different sizes with macro F1 0 and 1
    preds = {"1": "a", "2": "b", "3": "a", "4": "a", "5": "a"}
    golds = {"1": "b", "2": "a", "3": "a", "4": "a", "5": "a"}
    groups = {"1": "x", "2": "x", "3": "y", "4": "y", "5": "y"}
    r = metrics.grouped_accuracy_macro_f1(preds, golds, groups)
    assert r.per_group["x"].macro_f1 == 0.0 and r.per_group["y"].macro_f1 == 1.0
    assert r.overall.macro_f1 == 0.5 and r.check()


def test_grouped_mismatched_ids():
    with pytest.raises(metrics.MismatchedIds):
        metrics.grouped_accuracy_macro_f1({"1": 0}, {"2": 0}, lambda _: "g")


# --- token ---------------------------------------------------------------------

def test_token_f1_examples():
    assert metrics.token_f1([1, 0, 1], [1, 0, 1]).f1 == 1.0
    got = metrics.token_f1([1, 1, 0], [1, 0, 1])
    assert (got.precision, got.recall, got.f1) == (0.5, 0.5, 0.5)
    got = metrics.token_f1([0, 0, 0], [1, 0, 1])
    assert (got.precision, got.recall, got.f1) == (0.0, 0.0, 0.0)
    with pytest.raises(metrics.LengthMismatch):
        metrics.token_f1([1], [1, 0])


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), max_size=50))
def test_token_f1_matches_oracle(pairs):
    pred, gold = [p for p, _ in pairs], [g for _, g in pairs]
    got = metrics.token_f1(pred, gold)
    p, r, f = oracles.binary_prf(pred, gold)
    assert (got.precision, got.recall, got.f1) == (float(p), float(r), float(f))
    if got.precision + got.recall:
        assert abs(got.f1 - 2 * got.precision * got.recall / (got.precision + got.recall)) <= 1e-12
    assert all(0 <= x <= 1 for x in (got.precision, got.recall, got.f1))


@given(st.lists(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), max_size=10), max_size=6), st.randoms())
def test_corpus_token_f1_permutation_invariant(docs, rnd):
    pairs = [([p for p, _ in d], [g for _, g in d]) for d in docs]
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    assert metrics.corpus_token_f1(pairs) == metrics.corpus_token_f1(shuffled)


# --- arms ----------------------------------------------------------------------

def test_arm_accuracy_examples():
    r = metrics.arm_accuracy(["Placebo", "Indacaterol (300 µg)"], ["placebo", "indacaterol 300 µg"])
    assert r.count_correct and r.content_correct and r.correct
    assert not metrics.arm_accuracy(["a", "b", "c"], ["a", "b"]).count_correct
    r = metrics.arm_accuracy([], [])
    assert r.count_correct and r.content_correct


def test_corpus_arm_accuracy():
    results = [metrics.arm_accuracy(["a"], ["a"]), metrics.arm_accuracy(["a", "b"], ["a"])]
    got = metrics.corpus_arm_accuracy(results)
    assert got["abstract_accuracy"] == 0.5 and got["count_accuracy"] == 0.5 and got["content_accuracy"] == 1.0


# --- unigram -------------------------------------------------------------------

def test_unigram_examples():
    assert metrics.unigram_recall_precision("her MS", "her MS") == metrics.UnigramScore(1.0, 1.0)
    assert metrics.unigram_recall_precision("apple", "pear") == metrics.UnigramScore(0.0, 0.0)
    got = metrics.unigram_recall_precision("current regimen", "her current regimen for her MS")
    assert got.recall == pytest.approx(1 / 3, abs=1e-12) and got.precision == 1.0
    with pytest.raises(metrics.EmptyGold):
        metrics.unigram_recall_precision("x", "")


def test_unigram_multiset_vs_set():
    assert metrics.unigram_recall_precision("her", "her her").recall == 0.5
    assert metrics.unigram_recall_precision("her", "her her", multiset=False).recall == 1.0


def test_corpus_unigram_skips_empty_gold_and_picks_best_antecedent():
    got = metrics.corpus_unigram([("her MS", ["the patient", "her MS"]), ("x", "")])
    assert got == {"recall": 1.0, "precision": 1.0, "support": 1, "skipped": 1}


span = st.lists(st.sampled_from(["her", "MS", "the", "regimen", "."]), min_size=1, max_size=8).map(" ".join)


@given(span, span)
def test_unigram_swap_duality(a, b):
    ab, ba = metrics.unigram_recall_precision(a, b), metrics.unigram_recall_precision(b, a)
    assert ab.recall == ba.precision and ab.precision == ba.recall


# --- medication names and status -------------------------------------------------

def test_med_micro_pr_examples():
    gold = meds(("Kadian", A), ("Dilaudid", D), ("Levaquin", A))
    got = metrics.med_micro_pr([meds(("Kadian", A), ("Dilaudid", D))], [gold])
    assert got["recall"] == pytest.approx(2 / 3) and got["precision"] == 1.0
    four = meds(("a", A), ("b", A), ("c", A), ("d", A))
    got = metrics.med_micro_pr([meds(*four.items, ("e", A))], [four])
    assert got["recall"] == 1.0 and got["precision"] == pytest.approx(4 / 5)
    got = metrics.med_micro_pr([meds(("inderal  LA", A))], [meds(("Inderal LA", A))])
    assert got["recall"] == 1.0


@given(st.lists(st.sampled_from(["a", "B", "b", "c d", "C  D"]), max_size=6),
       st.lists(st.sampled_from(["a", "b", "c d", "e"]), max_size=6))
def test_med_micro_pr_dedup_idempotent(pred_names, gold_names):
    pred = meds(*[(n, A) for n in pred_names])
    gold = meds(*[(n, A) for n in gold_names])
    twice = meds(*(pred.items + pred.items))
    assert metrics.med_micro_pr([twice], [gold]) == metrics.med_micro_pr([pred], [gold])


def test_conditional_status_eval_examples():
    gold = [meds(("a", A), ("b", N), ("c", D))]
    one = metrics.conditional_status_eval({"s": [meds(("a", A), ("b", N), ("c", A))]}, gold)
    assert len(one.subset) == 3 and one.per_system["s"]["accuracy"] == pytest.approx(2 / 3)
    disjoint = metrics.conditional_status_eval({"s1": [meds(("a", A))], "s2": [meds(("b", N))]}, gold)
    assert disjoint.empty_subset and disjoint.per_system == {}
    two = metrics.conditional_status_eval(
        {"s1": [meds(("a", A), ("b", A))], "s2": [meds(("a", D), ("b", N))]}, gold)
    assert len(two.subset) == 2 and two.per_system["s1"]["accuracy"] == 0.5


# --- medication attributes ---------------------------------------------------------

def test_typed_f1_identical():
    labels = [["medication", "dosage", "none"]]
    assert all(v.f1 == 1.0 for k, v in metrics.typed_token_f1(labels, labels).items() if v.tp)


def test_phrase_exact_boundary():
    got = metrics.phrase_f1([["B-dosage", "I-dosage", "O"]], [["B-dosage", "I-dosage", "I-dosage"]])
    assert got["dosage"].f1 == 0.0
    with pytest.raises(metrics.InvalidBIO):
        metrics.phrase_f1([["I-dosage"]], [["O"]])


def test_bio_spans_matches_oracle():
    rng = random.Random(0)
    for _ in range(300):
        labels, prev = [], "O"
        for _ in range(rng.randint(0, 12)):
            lab = rng.choice(["O", "B-dosage", "B-route"] + ([f"I-{prev[2:]}"] if prev != "O" else []))
            labels.append(lab)
            prev = lab
        assert metrics.bio_spans(labels) == oracles.bio_spans(labels)


def test_relation_example():
    got = metrics.relation_f1([[MedRecord("aspirin", dosage=("325 mg",))]],
                              [[MedRecord("Aspirin", dosage=("325 MG",), route=("po",))]])
    assert got["dosage"].f1 == 1.0 and got["route"].f1 == 0.0 and got["medication"].f1 == 1.0


@given(st.lists(st.lists(st.sampled_from(["medication", "dosage", "route", "none"]), min_size=3, max_size=3),
                min_size=1, max_size=5), st.randoms())
def test_typed_f1_permutation_invariant(docs, rnd):
    golds = [list(reversed(d)) for d in docs]
    order = list(range(len(docs)))
    rnd.shuffle(order)
    a = metrics.typed_token_f1(docs, golds)
    b = metrics.typed_token_f1([docs[i] for i in order], [golds[i] for i in order])
    assert a == b
    for prf in a.values():
        assert 0 <= prf.f1 <= 1


def test_prf_table():
    table = metrics.prf_table({"dosage": metrics.PRF.from_counts(1, 1, 0)})
    assert table["dosage"]["precision"] == 0.5 and table["dosage"]["recall"] == 1.0
