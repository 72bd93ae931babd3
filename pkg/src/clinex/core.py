"""Task-agnostic data model: snippets, tokens, task kinds and output spaces."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Any, Mapping, Optional, Sequence, Union

PUNCTUATION = frozenset('.,;:()[]"\'!?')

MED_ATTR_TYPES = ("medication", "dosage", "route", "frequency", "duration", "reason")
MED_ATTR_TOKEN_LABELS = MED_ATTR_TYPES + ("none",)
MED_ATTR_BIO_LABELS = ("O",) + tuple(f"{p}-{t}" for t in MED_ATTR_TYPES for p in "BI")


class TaskKind(enum.Enum):
    SENSE_DISAMBIGUATION = "sense"
    EVIDENCE_TOKENS = "evidence_tokens"
    ARM_IDENTIFICATION = "arms"
    COREFERENCE = "coref"
    MEDICATION_STATUS = "med_status"
    MED_ATTR_TOKEN = "med_attr_token"
    MED_ATTR_PHRASE = "med_attr_phrase"
    MED_ATTR_RELATION = "med_attr_rel"

    @classmethod
    def parse(cls, value: Union[str, "TaskKind"]) -> "TaskKind":
        if isinstance(value, TaskKind):
            return value
        try:
            return cls(value)
        except ValueError:
            pass
        try:
            return cls[value.upper()]
        except KeyError:
            raise ValueError(f"unknown task {value!r}") from None


class Status(enum.Enum):
    ACTIVE = "active"
    DISCONTINUED = "discontinued"
    NEITHER = "neither"

    @classmethod
    def parse(cls, value: str) -> "Status":
        try:
            return cls(value.strip().casefold())
        except ValueError:
            raise ValueError(f"unknown medication status {value!r}") from None


@dataclass(frozen=True)
class Snippet:
    id: str
    text: str
    side: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"snippet {self.id!r} has empty text")


@dataclass(frozen=True)
class Token:
    """A token with UTF-8 byte offsets into the source text (end exclusive)."""

    surface: str
    char_start: int
    char_end: int


def span_text(text: str, start: int, end: int) -> str:
    """Decode the byte range ``[start, end)`` of ``text``."""
    return text.encode("utf-8")[start:end].decode("utf-8")


def _byte_offsets(text: str) -> Sequence[int]:
    if text.isascii():
        return range(len(text) + 1)
    return [0, *accumulate(len(c.encode("utf-8")) for c in text)]


def tokenize(text: str) -> list[Token]:
    """Whitespace split, then peel leading/trailing punctuation into 1-char tokens.

    Internal hyphens, slashes and periods survive, so "4-6" and "q.d" stay whole.

    >>> [t.surface for t in tokenize("q.d. (daily)")]
    ['q.d', '.', '(', 'daily', ')']
    """
    offsets = _byte_offsets(text)
    tokens: list[Token] = []
    for m in re.finditer(r"\S+", text):
        start, end = m.span()
        lo, hi = start, end
        while lo < hi and text[lo] in PUNCTUATION:
            lo += 1
        while hi > lo and text[hi - 1] in PUNCTUATION:
            hi -= 1
        pieces = [(i, i + 1) for i in range(start, lo)]
        if lo < hi:
            pieces.append((lo, hi))
        pieces.extend((i, i + 1) for i in range(hi, end))
        for a, b in pieces:
            tokens.append(Token(text[a:b], offsets[a], offsets[b]))
    return tokens


def token_surfaces(text: str) -> list[str]:
    return [t.surface for t in tokenize(text)]


# --- output space -----------------------------------------------------------

def _diag_field():
    return field(default_factory=dict, compare=False, repr=False)


@dataclass(frozen=True)
class Choice:
    index: int
    diagnostics: Mapping[str, int] = _diag_field()


@dataclass(frozen=True)
class TokenLabels:
    labels: tuple
    diagnostics: Mapping[str, int] = _diag_field()

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class Span:
    text: str
    diagnostics: Mapping[str, int] = _diag_field()


@dataclass(frozen=True)
class SpanList:
    spans: tuple
    diagnostics: Mapping[str, int] = _diag_field()

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(self.spans))


@dataclass(frozen=True)
class MedStatusList:
    items: tuple  # of (name, Status)
    diagnostics: Mapping[str, int] = _diag_field()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple((n, s) for n, s in self.items))

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.items]


@dataclass(frozen=True)
class MedRecord:
    medication: str
    dosage: Optional[tuple] = None
    route: Optional[tuple] = None
    frequency: Optional[tuple] = None
    duration: Optional[tuple] = None
    reason: Optional[tuple] = None

    def __post_init__(self):
        for name in MED_ATTR_TYPES[1:]:
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))

    def attributes(self):
        """Yield ``(type, value)`` pairs for every attribute span."""
        for name in MED_ATTR_TYPES[1:]:
            for value in getattr(self, name) or ():
                yield name, value

    def to_json(self) -> dict:
        out: dict[str, Any] = {"medication": self.medication}
        for name in MED_ATTR_TYPES[1:]:
            value = getattr(self, name)
            if value is not None:
                out[name] = list(value)
        return out

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "MedRecord":
        return cls(**{k: data.get(k) for k in MED_ATTR_TYPES})


@dataclass(frozen=True)
class MedAttrRecords:
    records: tuple
    diagnostics: Mapping[str, int] = _diag_field()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))


StructuredOutput = Union[Choice, TokenLabels, Span, SpanList, MedStatusList, MedAttrRecords]

OUTPUT_TYPE = {
    TaskKind.SENSE_DISAMBIGUATION: Choice,
    TaskKind.EVIDENCE_TOKENS: TokenLabels,
    TaskKind.ARM_IDENTIFICATION: SpanList,
    TaskKind.COREFERENCE: Span,
    TaskKind.MEDICATION_STATUS: MedStatusList,
    TaskKind.MED_ATTR_TOKEN: TokenLabels,
    TaskKind.MED_ATTR_PHRASE: TokenLabels,
    TaskKind.MED_ATTR_RELATION: MedAttrRecords,
}

TOKEN_LABEL_SPACE = {
    TaskKind.EVIDENCE_TOKENS: frozenset((0, 1)),
    TaskKind.MED_ATTR_TOKEN: frozenset(MED_ATTR_TOKEN_LABELS),
    TaskKind.MED_ATTR_PHRASE: frozenset(MED_ATTR_BIO_LABELS),
}


def output_to_json(out: StructuredOutput) -> dict:
    if isinstance(out, Choice):
        return {"type": "choice", "index": out.index}
    if isinstance(out, TokenLabels):
        return {"type": "token_labels", "labels": list(out.labels)}
    if isinstance(out, Span):
        return {"type": "span", "text": out.text}
    if isinstance(out, SpanList):
        return {"type": "span_list", "spans": list(out.spans)}
    if isinstance(out, MedStatusList):
        return {"type": "med_status_list",
                "items": [{"name": n, "status": s.value} for n, s in out.items]}
    if isinstance(out, MedAttrRecords):
        return {"type": "med_attr_records", "records": [r.to_json() for r in out.records]}
    raise TypeError(f"not a structured output: {out!r}")


def output_from_json(data: Mapping[str, Any]) -> StructuredOutput:
    kind = data["type"]
    if kind == "choice":
        return Choice(int(data["index"]))
    if kind == "token_labels":
        return TokenLabels(tuple(data["labels"]))
    if kind == "span":
        return Span(data["text"])
    if kind == "span_list":
        return SpanList(tuple(data["spans"]))
    if kind == "med_status_list":
        return MedStatusList(tuple((d["name"], Status.parse(d["status"])) for d in data["items"]))
    if kind == "med_attr_records":
        return MedAttrRecords(tuple(MedRecord.from_json(r) for r in data["records"]))
    raise ValueError(f"unknown structured output type {kind!r}")


def bio_violations(labels: Sequence[str]) -> list[int]:
    """Positions holding an I-t not preceded by B-t or I-t."""
    bad = []
    prev = "O"
    for i, lab in enumerate(labels):
        if lab.startswith("I-") and prev[2:] != lab[2:]:
            bad.append(i)
        prev = lab
    return bad


def _record_violations(rec: MedRecord) -> list[str]:
    out = []
    if not isinstance(rec, MedRecord):
        return [f"not a MedRecord: {rec!r}"]
    if not rec.medication:
        out.append("empty medication")
    for name in MED_ATTR_TYPES[1:]:
        value = getattr(rec, name)
        if value is None:
            continue
        if not value:
            out.append(f"empty {name} list for {rec.medication!r}")
        elif not all(isinstance(v, str) and v for v in value):
            out.append(f"empty {name} value for {rec.medication!r}")
    return out


def validate_output(
    task: TaskKind,
    out: StructuredOutput,
    snippet: Snippet,
    candidates: Optional[Sequence[str]] = None,
) -> list[str]:
    """Return every invariant violation of ``out``; an empty list means ok."""
    expected = OUTPUT_TYPE[task]
    if not isinstance(out, expected):
        return [f"wrong output type {type(out).__name__}, expected {expected.__name__}"]
    violations: list[str] = []
    if isinstance(out, Choice):
        if candidates is None:
            violations.append("no candidate list to check choice against")
        elif not 0 <= out.index < len(candidates):
            violations.append(f"index out of range: {out.index} not in [0, {len(candidates)})")
    elif isinstance(out, TokenLabels):
        n = len(tokenize(snippet.text))
        if len(out.labels) != n:
            violations.append(f"length mismatch: {len(out.labels)} labels for {n} tokens")
        space = TOKEN_LABEL_SPACE[task]
        unknown = sorted({repr(x) for x in out.labels if x not in space})
        if unknown:
            violations.append(f"labels outside label space: {', '.join(unknown)}")
        if task is TaskKind.MED_ATTR_PHRASE and not unknown:
            for i in bio_violations(out.labels):
                violations.append(f"invalid BIO at position {i}")
    elif isinstance(out, Span):
        if not isinstance(out.text, str):
            violations.append("span is not a string")
    elif isinstance(out, SpanList):
        for s in out.spans:
            if not isinstance(s, str) or not s.strip():
                violations.append(f"empty span in list: {s!r}")
    elif isinstance(out, MedStatusList):
        for name, status in out.items:
            if not name:
                violations.append("empty medication name")
            if not isinstance(status, Status):
                violations.append(f"unknown status {status!r} for {name!r}")
    elif isinstance(out, MedAttrRecords):
        for rec in out.records:
            violations.extend(_record_violations(rec))
    return violations
