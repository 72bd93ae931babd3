"""Evaluation metrics for every task.

Ratios are accumulated as exact fractions and converted to float once, so a
metric's value does not depend on summation order.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Mapping, Sequence, Union

from .core import MED_ATTR_TYPES, MedRecord, MedStatusList, Status, tokenize


class MetricError(ValueError):
    pass


class MismatchedIds(MetricError):
    def __init__(self, missing_pred: Iterable[str] = (), missing_gold: Iterable[str] = ()):
        self.missing_pred = sorted(missing_pred)
        self.missing_gold = sorted(missing_gold)
        super().__init__(
            f"ids without prediction: {self.missing_pred}; ids without gold: {self.missing_gold}"
        )


class LengthMismatch(MetricError):
    pass


class InvalidBIO(MetricError):
    pass


class EmptyGold(MetricError):
    pass


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def _mean(values: Sequence[Fraction]) -> Fraction:
    return sum(values, Fraction(0)) / len(values) if values else Fraction(0)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        return cls(
            float(_ratio(tp, tp + fp)),
            float(_ratio(tp, tp + fn)),
            float(_ratio(2 * tp, 2 * tp + fp + fn)),
            tp, fp, fn,
        )

    def to_json(self) -> dict:
        return asdict(self)


def _f1_fraction(tp: int, fp: int, fn: int) -> Fraction:
    return _ratio(2 * tp, 2 * tp + fp + fn)


def check_ids(pred_ids: Iterable[str], gold_ids: Iterable[str]) -> None:
    pred_ids, gold_ids = set(pred_ids), set(gold_ids)
    if pred_ids != gold_ids:
        raise MismatchedIds(gold_ids - pred_ids, pred_ids - gold_ids)


# --- grouped classification (sense disambiguation) -------------------------

@dataclass(frozen=True)
class GroupMetrics:
    accuracy: float
    macro_f1: float
    micro_recall: float
    micro_precision: float
    support: int


@dataclass(frozen=True)
class GroupedEvalReport:
    per_group: dict
    overall: GroupMetrics

    def check(self) -> bool:
        """Whether ``overall`` is the unweighted group mean (support summed)."""
        if not self.per_group:
            return self.overall.support == 0
        groups = list(self.per_group.values())
        means = [sum(getattr(g, f) for g in groups) / len(groups)
                 for f in ("accuracy", "macro_f1", "micro_recall", "micro_precision")]
        got = [self.overall.accuracy, self.overall.macro_f1,
               self.overall.micro_recall, self.overall.micro_precision]
        return (all(abs(a - b) < 1e-12 for a, b in zip(means, got))
                and self.overall.support == sum(g.support for g in groups))

    def to_json(self) -> dict:
        return {
            "overall": asdict(self.overall),
            "per_group": {str(k): asdict(v) for k, v in sorted(self.per_group.items(), key=lambda kv: str(kv[0]))},
        }


def _group_scores(pairs: Sequence[tuple]) -> tuple[Fraction, Fraction]:
    correct = sum(1 for p, g in pairs if p == g)
    f1s = []
    for label in sorted({g for _, g in pairs}, key=repr):
        tp = sum(1 for p, g in pairs if p == label and g == label)
        fp = sum(1 for p, g in pairs if p == label and g != label)
        fn = sum(1 for p, g in pairs if g == label and p != label)
        f1s.append(_f1_fraction(tp, fp, fn))
    return _ratio(correct, len(pairs)), _mean(f1s)


def grouped_accuracy_macro_f1(
    preds: Mapping[str, Hashable],
    golds: Mapping[str, Hashable],
    group_of: Union[Mapping[str, Hashable], Callable[[str], Hashable]],
) -> GroupedEvalReport:
    """Accuracy and macro F1 within each group, then the unweighted mean over groups.

    Macro F1 averages only labels with gold support in the group.
    """
    check_ids(preds, golds)
    key = group_of.__getitem__ if isinstance(group_of, Mapping) else group_of
    grouped: dict = {}
    for ex_id in golds:
        grouped.setdefault(key(ex_id), []).append((preds[ex_id], golds[ex_id]))
    per_group = {}
    accs, f1s = [], []
    for group, pairs in grouped.items():
        acc, f1 = _group_scores(pairs)
        accs.append(acc)
        f1s.append(f1)
        per_group[group] = GroupMetrics(float(acc), float(f1), float(acc), float(acc), len(pairs))
    acc, f1 = _mean(accs), _mean(f1s)
    overall = GroupMetrics(float(acc), float(f1), float(acc), float(acc), len(golds))
    return GroupedEvalReport(per_group, overall)


# --- binary token labels ----------------------------------------------------

def _binary_counts(pred: Sequence[int], gold: Sequence[int]) -> tuple[int, int, int]:
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predicted labels vs {len(gold)} gold labels")
    tp = sum(1 for p, g in zip(pred, gold) if p and g)
    fp = sum(1 for p, g in zip(pred, gold) if p and not g)
    fn = sum(1 for p, g in zip(pred, gold) if g and not p)
    return tp, fp, fn


def token_f1(pred: Sequence[int], gold: Sequence[int]) -> PRF:
    return PRF.from_counts(*_binary_counts(pred, gold))


def corpus_token_f1(pairs: Iterable[tuple[Sequence[int], Sequence[int]]]) -> PRF:
    """Micro P/R/F1 over every token of every document."""
    tp = fp = fn = 0
    for pred, gold in pairs:
        a, b, c = _binary_counts(pred, gold)
        tp, fp, fn = tp + a, fp + b, fn + c
    return PRF.from_counts(tp, fp, fn)


# --- arms -------------------------------------------------------------------

@dataclass(frozen=True)
class ArmResult:
    count_correct: bool
    content_correct: bool

    @property
    def correct(self) -> bool:
        return self.count_correct and self.content_correct


def _norm_arm(text: str) -> str:
    return " ".join(re.sub(r"[^\w\s]", " ", text.casefold()).split())


def arms_match(pred: str, gold: str, min_jaccard: float = 0.5) -> bool:
    a, b = _norm_arm(pred), _norm_arm(gold)
    if not a or not b:
        return False
    if a in b or b in a:
        return True
    ta, tb = set(a.split()), set(b.split())
    return len(ta & tb) >= min_jaccard * len(ta | tb)


def arm_accuracy(pred_arms: Sequence[str], gold_arms: Sequence[str], min_jaccard: float = 0.5) -> ArmResult:
    """Arm count check plus greedy one-to-one content matching of gold arms."""
    unmatched = list(range(len(gold_arms)))
    for arm in pred_arms:
        for k in unmatched:
            if arms_match(arm, gold_arms[k], min_jaccard):
                unmatched.remove(k)
                break
    return ArmResult(len(pred_arms) == len(gold_arms), not unmatched)


def corpus_arm_accuracy(results: Sequence[ArmResult]) -> dict:
    n = len(results)
    return {
        "abstract_accuracy": float(_ratio(sum(r.correct for r in results), n)),
        "count_accuracy": float(_ratio(sum(r.count_correct for r in results), n)),
        "content_accuracy": float(_ratio(sum(r.content_correct for r in results), n)),
        "support": n,
    }


# --- unigram overlap (coreference) -----------------------------------------

@dataclass(frozen=True)
class UnigramScore:
    recall: float
    precision: float


def _unigrams(text: str) -> list[str]:
    return [t.surface.casefold() for t in tokenize(text)]


def _unigram_counts(pred: str, gold: str, multiset: bool) -> tuple[int, int, int]:
    p, g = _unigrams(pred), _unigrams(gold)
    if multiset:
        overlap = sum((Counter(p) & Counter(g)).values())
        return overlap, len(p), len(g)
    sp, sg = set(p), set(g)
    return len(sp & sg), len(sp), len(sg)


def unigram_recall_precision(pred_span: str, gold_span: str, multiset: bool = True) -> UnigramScore:
    overlap, n_pred, n_gold = _unigram_counts(pred_span, gold_span, multiset)
    if n_gold == 0:
        raise EmptyGold(f"gold span {gold_span!r} has no unigrams")
    return UnigramScore(float(_ratio(overlap, n_gold)), float(_ratio(overlap, n_pred)))


def best_antecedent(pred_span: str, antecedents: Sequence[str], multiset: bool = True) -> str:
    """The acceptable antecedent sharing the most unigrams with the prediction (first on ties)."""
    if not antecedents:
        raise EmptyGold("no antecedents")
    return max(antecedents, key=lambda a: _unigram_counts(pred_span, a, multiset)[0])


def corpus_unigram(
    pairs: Iterable[tuple[str, Union[str, Sequence[str]]]], multiset: bool = True
) -> dict:
    """Macro unigram recall/precision; examples with empty gold are skipped and counted."""
    recalls, precisions = [], []
    skipped = 0
    for pred, gold in pairs:
        if not isinstance(gold, str):
            gold = best_antecedent(pred, gold, multiset)
        overlap, n_pred, n_gold = _unigram_counts(pred, gold, multiset)
        if n_gold == 0:
            skipped += 1
            continue
        recalls.append(_ratio(overlap, n_gold))
        precisions.append(_ratio(overlap, n_pred))
    return {
        "recall": float(_mean(recalls)),
        "precision": float(_mean(precisions)),
        "support": len(recalls),
        "skipped": skipped,
    }


# --- medication status ------------------------------------------------------

def norm_name(name: str) -> str:
    return " ".join(name.casefold().split())


def _names(meds: Union[MedStatusList, Iterable]) -> set[str]:
    items = meds.items if isinstance(meds, MedStatusList) else meds
    return {norm_name(n if isinstance(n, str) else n[0]) for n in items}


def med_micro_pr(preds: Sequence[MedStatusList], golds: Sequence[MedStatusList]) -> dict:
    """Micro recall/precision of exact (case/whitespace-normalized) medication names."""
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions for {len(golds)} gold examples")
    tp = n_pred = n_gold = 0
    for pred, gold in zip(preds, golds):
        p, g = _names(pred), _names(gold)
        tp += len(p & g)
        n_pred += len(p)
        n_gold += len(g)
    return {"recall": float(_ratio(tp, n_gold)), "precision": float(_ratio(tp, n_pred)),
            "tp": tp, "predicted": n_pred, "gold": n_gold}


def _status_map(meds: MedStatusList) -> dict[str, Status]:
    out: dict[str, Status] = {}
    for name, status in meds.items:
        out.setdefault(norm_name(name), status)
    return out


@dataclass
class ConditionalReport:
    subset: list
    per_system: dict = field(default_factory=dict)

    @property
    def empty_subset(self) -> bool:
        return not self.subset

    def to_json(self) -> dict:
        return {
            "subset_size": len(self.subset),
            "empty_subset": self.empty_subset,
            "per_system": self.per_system,
        }


def status_scores(pairs: Sequence[tuple[Status, Status]]) -> dict:
    """Accuracy and macro F1 over statuses seen in gold or prediction; pairs are (pred, gold)."""
    correct = sum(1 for p, g in pairs if p == g)
    labels = [s for s in Status if any(s in pair for pair in pairs)]
    f1s = []
    for label in labels:
        tp = sum(1 for p, g in pairs if p == label and g == label)
        fp = sum(1 for p, g in pairs if p == label and g != label)
        fn = sum(1 for p, g in pairs if g == label and p != label)
        f1s.append(_f1_fraction(tp, fp, fn))
    return {"accuracy": float(_ratio(correct, len(pairs))), "macro_f1": float(_mean(f1s)),
            "support": len(pairs)}


def conditional_status_eval(
    runs: Mapping[str, Sequence[MedStatusList]], gold: Sequence[MedStatusList]
) -> ConditionalReport:
    """Status accuracy/macro F1 restricted to gold medications every system found."""
    if not runs:
        raise MetricError("need at least one system run")
    for name, run in runs.items():
        if len(run) != len(gold):
            raise LengthMismatch(f"system {name!r}: {len(run)} predictions for {len(gold)} examples")
    maps = {name: [_status_map(m) for m in run] for name, run in runs.items()}
    subset = []
    for i, g in enumerate(gold):
        for med, status in _status_map(g).items():
            if all(med in maps[name][i] for name in maps):
                subset.append((i, med, status))
    report = ConditionalReport([(i, med) for i, med, _ in subset])
    if not subset:
        return report
    for name in runs:
        pairs = [(maps[name][i][med], status) for i, med, status in subset]
        report.per_system[name] = status_scores(pairs)
    return report


# --- medication attributes --------------------------------------------------

def typed_token_f1(
    preds: Sequence[Sequence[str]], golds: Sequence[Sequence[str]], types: Sequence[str] = MED_ATTR_TYPES
) -> dict[str, PRF]:
    """Per-type micro F1 over tokens of all documents."""
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predicted documents vs {len(golds)} gold")
    counts = {t: [0, 0, 0] for t in types}
    for pred, gold in zip(preds, golds):
        if len(pred) != len(gold):
            raise LengthMismatch(f"{len(pred)} predicted labels vs {len(gold)} gold labels")
        for p, g in zip(pred, gold):
            if p in counts:
                counts[p][0 if p == g else 1] += 1
            if g in counts and p != g:
                counts[g][2] += 1
    return {t: PRF.from_counts(*counts[t]) for t in types}


def bio_spans(labels: Sequence[str]) -> set[tuple[str, int, int]]:
    """Typed spans ``(type, start, end)`` of a BIO sequence; raises InvalidBIO."""
    spans = set()
    start, kind = None, None
    for i, lab in enumerate(list(labels) + ["O"]):
        if lab.startswith("I-"):
            if kind != lab[2:]:
                raise InvalidBIO(f"I-{lab[2:]} at position {i} does not continue a {lab[2:]} span")
            continue
        if kind is not None:
            spans.add((kind, start, i))
            start, kind = None, None
        if lab.startswith("B-"):
            start, kind = i, lab[2:]
        elif lab != "O":
            raise InvalidBIO(f"label {lab!r} at position {i} is not BIO")
    return spans


def phrase_f1(
    preds: Sequence[Sequence[str]], golds: Sequence[Sequence[str]], types: Sequence[str] = MED_ATTR_TYPES
) -> dict[str, PRF]:
    """Exact-boundary, exact-type span F1 per type."""
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predicted documents vs {len(golds)} gold")
    counts = {t: [0, 0, 0] for t in types}
    for pred, gold in zip(preds, golds):
        if len(pred) != len(gold):
            raise LengthMismatch(f"{len(pred)} predicted labels vs {len(gold)} gold labels")
        p, g = bio_spans(pred), bio_spans(gold)
        for kind, *_ in p & g:
            if kind in counts:
                counts[kind][0] += 1
        for kind, *_ in p - g:
            if kind in counts:
                counts[kind][1] += 1
        for kind, *_ in g - p:
            if kind in counts:
                counts[kind][2] += 1
    return {t: PRF.from_counts(*counts[t]) for t in types}


def relation_triples(records: Iterable[MedRecord]) -> set[tuple[str, str, str]]:
    """``(medication, type, value)`` triples, normalized; medication names appear as their own type."""
    out = set()
    for rec in records:
        med = norm_name(rec.medication)
        out.add((med, "medication", med))
        for kind, value in rec.attributes():
            out.add((med, kind, norm_name(value)))
    return out


def relation_f1(
    preds: Sequence[Iterable[MedRecord]], golds: Sequence[Iterable[MedRecord]],
    types: Sequence[str] = MED_ATTR_TYPES,
) -> dict[str, PRF]:
    """A predicted triple counts when a gold record for the same medication holds that value."""
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predicted documents vs {len(golds)} gold")
    counts = {t: [0, 0, 0] for t in types}
    for pred, gold in zip(preds, golds):
        p, g = relation_triples(pred), relation_triples(gold)
        for bucket, triples in ((0, p & g), (1, p - g), (2, g - p)):
            for _, kind, _ in triples:
                if kind in counts:
                    counts[kind][bucket] += 1
    return {t: PRF.from_counts(*counts[t]) for t in types}


def prf_table(scores: Mapping[str, PRF]) -> dict:
    return {k: v.to_json() for k, v in scores.items()}

