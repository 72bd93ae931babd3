"""Snippet, sense-inventory and gold-annotation files, plus reverse substitution.

Every format is JSON Lines (inventory is a single JSON object). Writers emit a
canonical form, so ``write(load(path))`` reproduces a canonical file byte for
byte.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence

from .core import (
    MED_ATTR_BIO_LABELS,
    MED_ATTR_TOKEN_LABELS,
    MED_ATTR_TYPES,
    MedAttrRecords,
    MedRecord,
    MedStatusList,
    Choice,
    Snippet,
    Span,
    SpanList,
    Status,
    TaskKind,
    TokenLabels,
    bio_violations,
)


class CorpusError(ValueError):
    pass


class SchemaError(CorpusError):
    def __init__(self, line: int, field_name: str, message: str, path=None):
        where = f"{path}:{line}" if path is not None else f"line {line}"
        super().__init__(f"{where}: field {field_name!r}: {message}")
        self.line = line
        self.field = field_name


class DuplicateId(CorpusError):
    def __init__(self, snippet_id: str, first_line: int, second_line: int):
        super().__init__(f"duplicate id {snippet_id!r} on lines {first_line} and {second_line}")
        self.id = snippet_id
        self.lines = (first_line, second_line)


def _dump(row: Mapping[str, Any]) -> str:
    return json.dumps(row, ensure_ascii=False)


def _write_lines(path, rows: Iterable[Mapping[str, Any]]) -> None:
    Path(path).write_text("".join(_dump(r) + "\n" for r in rows), encoding="utf-8")


def _rows(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line number, object)`` for each non-blank line; ids must be unique."""
    seen: dict[str, int] = {}
    text = Path(path).read_text(encoding="utf-8")
    # JSON escapes "\n" inside strings, but not other Unicode line breaks
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(lineno, "<line>", f"invalid JSON: {exc.msg}", path) from exc
        if not isinstance(row, dict):
            raise SchemaError(lineno, "<line>", "expected a JSON object", path)
        sid = row.get("id")
        if not isinstance(sid, str) or not sid:
            raise SchemaError(lineno, "id", "missing or not a non-empty string", path)
        if sid in seen:
            raise DuplicateId(sid, seen[sid], lineno)
        seen[sid] = lineno
        yield lineno, row


def _field(row, name, kind, lineno, path, optional=False):
    if name not in row:
        if optional:
            return None
        raise SchemaError(lineno, name, "missing", path)
    value = row[name]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise SchemaError(lineno, name, f"expected {getattr(kind, '__name__', kind)}", path)
    return value


def _str_list(row, name, lineno, path, allow_empty=True) -> list[str]:
    value = _field(row, name, list, lineno, path)
    if not all(isinstance(v, str) for v in value):
        raise SchemaError(lineno, name, "expected a list of strings", path)
    if not allow_empty and not value:
        raise SchemaError(lineno, name, "must not be empty", path)
    return value


# --- snippets ---------------------------------------------------------------

def load_snippets(path) -> list[Snippet]:
    out = []
    for lineno, row in _rows(path):
        text = _field(row, "text", str, lineno, path)
        if not text:
            raise SchemaError(lineno, "text", "must not be empty", path)
        side = _field(row, "side", str, lineno, path, optional=True) or ""
        out.append(Snippet(row["id"], text, side))
    return out


def write_snippets(snippets: Iterable[Snippet], path) -> None:
    rows = []
    for s in snippets:
        row = {"id": s.id, "text": s.text}
        if s.side:
            row["side"] = s.side
        rows.append(row)
    _write_lines(path, rows)


# --- sense inventory --------------------------------------------------------

@dataclass(frozen=True)
class SenseInventory:
    senses: Mapping[str, tuple]

    def __post_init__(self):
        clean = {}
        for acronym, expansions in self.senses.items():
            expansions = tuple(expansions)
            if not expansions:
                raise CorpusError(f"acronym {acronym!r} has no expansions")
            folded = [e.casefold() for e in expansions]
            if len(set(folded)) != len(folded):
                raise CorpusError(f"acronym {acronym!r} has duplicate expansions")
            if not all(e.strip() for e in expansions):
                raise CorpusError(f"acronym {acronym!r} has an empty expansion")
            clean[acronym] = expansions
        object.__setattr__(self, "senses", clean)

    def __getitem__(self, acronym: str) -> tuple:
        return self.senses[acronym]

    def __contains__(self, acronym: str) -> bool:
        return acronym in self.senses

    def __len__(self) -> int:
        return len(self.senses)

    def acronyms(self) -> list[str]:
        return list(self.senses)


def load_inventory(path) -> SenseInventory:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(exc.lineno, "<file>", f"invalid JSON: {exc.msg}", path) from exc
    if not isinstance(data, dict):
        raise SchemaError(1, "<file>", "expected an object mapping acronym to expansions", path)
    for acronym, expansions in data.items():
        if not isinstance(expansions, list) or not all(isinstance(e, str) for e in expansions):
            raise SchemaError(1, acronym, "expected a list of strings", path)
    return SenseInventory(data)


def write_inventory(inventory: SenseInventory, path) -> None:
    data = {k: list(v) for k, v in inventory.senses.items()}
    Path(path).write_text(json.dumps(data, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


# --- gold annotations -------------------------------------------------------

@dataclass
class GoldSet:
    task: TaskKind
    entries: dict = field(default_factory=dict)
    # sense: candidate list and acronym per id
    candidates: dict = field(default_factory=dict)
    acronyms: dict = field(default_factory=dict)
    # coref: acceptable antecedents and pronoun per id
    antecedents: dict = field(default_factory=dict)
    pronouns: dict = field(default_factory=dict)
    # token tasks: gold token surfaces per id
    tokens: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return list(self.entries)


_GOLD_KEYS = {
    TaskKind.SENSE_DISAMBIGUATION: {"id", "acronym", "candidates", "label"},
    TaskKind.EVIDENCE_TOKENS: {"id", "tokens", "labels"},
    TaskKind.ARM_IDENTIFICATION: {"id", "arms"},
    TaskKind.COREFERENCE: {"id", "pronoun", "antecedents"},
    TaskKind.MEDICATION_STATUS: {"id", "meds"},
    TaskKind.MED_ATTR_TOKEN: {"id", "tokens", "labels"},
    TaskKind.MED_ATTR_PHRASE: {"id", "tokens", "labels"},
    TaskKind.MED_ATTR_RELATION: {"id", "records"},
}


def _token_labels(row, task, lineno, path) -> TokenLabels:
    tokens = _str_list(row, "tokens", lineno, path)
    labels = _field(row, "labels", list, lineno, path)
    if len(labels) != len(tokens):
        raise SchemaError(lineno, "labels", f"{len(labels)} labels for {len(tokens)} tokens", path)
    if task is TaskKind.EVIDENCE_TOKENS:
        space = (0, 1)
        ok = all(type(x) is int and x in space for x in labels)
    else:
        space = MED_ATTR_TOKEN_LABELS if task is TaskKind.MED_ATTR_TOKEN else MED_ATTR_BIO_LABELS
        ok = all(isinstance(x, str) and x in space for x in labels)
    if not ok:
        raise SchemaError(lineno, "labels", f"labels outside {list(space)}", path)
    if task is TaskKind.MED_ATTR_PHRASE and bio_violations(labels):
        raise SchemaError(lineno, "labels", f"invalid BIO at {bio_violations(labels)}", path)
    return TokenLabels(tuple(labels))


def _record(data, lineno, path) -> MedRecord:
    if not isinstance(data, dict):
        raise SchemaError(lineno, "records", "each record must be an object", path)
    unknown = set(data) - set(MED_ATTR_TYPES)
    if unknown:
        raise SchemaError(lineno, "records", f"unknown attribute {sorted(unknown)[0]!r}", path)
    med = data.get("medication")
    if not isinstance(med, str) or not med:
        raise SchemaError(lineno, "records.medication", "missing or empty", path)
    for name in MED_ATTR_TYPES[1:]:
        value = data.get(name)
        if value is not None and (not isinstance(value, list) or not value
                                  or not all(isinstance(v, str) and v for v in value)):
            raise SchemaError(lineno, f"records.{name}", "expected a non-empty list of strings", path)
    return MedRecord.from_json(data)


def load_gold(path, task) -> GoldSet:
    task = TaskKind.parse(task)
    gold = GoldSet(task)
    required = _GOLD_KEYS[task]
    for lineno, row in _rows(path):
        missing = sorted(required - set(row))
        if missing:
            raise SchemaError(lineno, missing[0], f"missing (is this a {task.value} gold file?)", path)
        sid = row["id"]
        if task is TaskKind.SENSE_DISAMBIGUATION:
            acronym = _field(row, "acronym", str, lineno, path)
            cands = _str_list(row, "candidates", lineno, path, allow_empty=False)
            label = row["label"]
            if type(label) is int and 0 <= label < len(cands):
                index = label
            elif isinstance(label, str) and label in cands:
                index = cands.index(label)
            else:
                raise SchemaError(lineno, "label", f"{label!r} is not one of the candidates", path)
            gold.entries[sid] = Choice(index)
            gold.candidates[sid] = tuple(cands)
            gold.acronyms[sid] = acronym
        elif task in (TaskKind.EVIDENCE_TOKENS, TaskKind.MED_ATTR_TOKEN, TaskKind.MED_ATTR_PHRASE):
            gold.entries[sid] = _token_labels(row, task, lineno, path)
            gold.tokens[sid] = tuple(row["tokens"])
        elif task is TaskKind.ARM_IDENTIFICATION:
            arms = _str_list(row, "arms", lineno, path)
            if not all(a.strip() for a in arms):
                raise SchemaError(lineno, "arms", "empty arm", path)
            gold.entries[sid] = SpanList(tuple(arms))
        elif task is TaskKind.COREFERENCE:
            pronoun = _field(row, "pronoun", str, lineno, path)
            ants = _str_list(row, "antecedents", lineno, path, allow_empty=False)
            gold.entries[sid] = Span(ants[0])
            gold.antecedents[sid] = tuple(ants)
            gold.pronouns[sid] = pronoun
        elif task is TaskKind.MEDICATION_STATUS:
            meds = _field(row, "meds", list, lineno, path)
            items = []
            for med in meds:
                if not isinstance(med, dict) or not isinstance(med.get("name"), str) or not med["name"]:
                    raise SchemaError(lineno, "meds.name", "missing or empty", path)
                try:
                    status = Status.parse(med.get("status", "") if isinstance(med.get("status"), str) else "")
                except ValueError as exc:
                    raise SchemaError(lineno, "meds.status", str(exc), path) from None
                items.append((med["name"], status))
            gold.entries[sid] = MedStatusList(tuple(items))
        else:
            records = _field(row, "records", list, lineno, path)
            gold.entries[sid] = MedAttrRecords(tuple(_record(r, lineno, path) for r in records))
    return gold


def _gold_row(gold: GoldSet, sid: str) -> dict:
    out = gold.entries[sid]
    task = gold.task
    if task is TaskKind.SENSE_DISAMBIGUATION:
        cands = gold.candidates[sid]
        return {"id": sid, "acronym": gold.acronyms[sid], "candidates": list(cands),
                "label": cands[out.index]}
    if task in (TaskKind.EVIDENCE_TOKENS, TaskKind.MED_ATTR_TOKEN, TaskKind.MED_ATTR_PHRASE):
        return {"id": sid, "tokens": list(gold.tokens[sid]), "labels": list(out.labels)}
    if task is TaskKind.ARM_IDENTIFICATION:
        return {"id": sid, "arms": list(out.spans)}
    if task is TaskKind.COREFERENCE:
        return {"id": sid, "pronoun": gold.pronouns[sid], "antecedents": list(gold.antecedents[sid])}
    if task is TaskKind.MEDICATION_STATUS:
        return {"id": sid, "meds": [{"name": n, "status": s.value} for n, s in out.items]}
    return {"id": sid, "records": [r.to_json() for r in out.records]}


def write_gold(gold: GoldSet, path) -> None:
    _write_lines(path, (_gold_row(gold, sid) for sid in gold.entries))


# --- reverse substitution ---------------------------------------------------

@dataclass(frozen=True)
class DerivedExample:
    """An acronym-substituted snippet; ``offset`` is the UTF-8 byte offset of the acronym."""

    snippet: Snippet
    acronym: str
    label: str
    candidates: tuple
    offset: int
    source_id: str

    @property
    def label_index(self) -> int:
        folded = [c.casefold() for c in self.candidates]
        return folded.index(self.label.casefold())

    def reconstruct(self) -> str:
        raw = self.snippet.text.encode("utf-8")
        end = self.offset + len(self.acronym.encode("utf-8"))
        if raw[self.offset:end] != self.acronym.encode("utf-8"):
            raise CorpusError(f"{self.snippet.id}: acronym not found at byte {self.offset}")
        return (raw[:self.offset] + self.label.encode("utf-8") + raw[end:]).decode("utf-8")

    def to_json(self) -> dict:
        return {"id": self.snippet.id, "text": self.snippet.text, "acronym": self.acronym,
                "label": self.label, "candidates": list(self.candidates),
                "offset": self.offset, "source_id": self.source_id}

    @classmethod
    def from_json(cls, row: Mapping[str, Any]) -> "DerivedExample":
        return cls(Snippet(row["id"], row["text"], row["acronym"]), row["acronym"], row["label"],
                   tuple(row["candidates"]), int(row["offset"]), row["source_id"])


def _expansion_pattern(inventory: SenseInventory) -> tuple[re.Pattern, dict]:
    owners: dict[str, list[str]] = {}
    for acronym, expansions in inventory.senses.items():
        for exp in expansions:
            owners.setdefault(exp.casefold(), []).append(acronym)
    alternatives = sorted(owners, key=lambda e: (-len(e), e))
    body = "|".join(re.escape(e) for e in alternatives)
    # letters and digits on either side block a match
    pattern = re.compile(rf"(?<![^\W_])(?:{body})(?![^\W_])", re.IGNORECASE)
    return pattern, owners


def find_expansions(text: str, inventory: SenseInventory) -> list[tuple[int, int, str]]:
    """Non-overlapping ``(char start, char end, acronym)`` occurrences, longest expansion first."""
    if not len(inventory):
        return []
    pattern, owners = _expansion_pattern(inventory)
    out = []
    for m in pattern.finditer(text):
        for acronym in owners[m.group(0).casefold()]:
            out.append((m.start(), m.end(), acronym))
    return out


def reverse_substitute(
    corpus: Iterable[Snippet],
    inventory: SenseInventory,
    seed: int = 0,
    sample: Optional[int] = None,
) -> list[DerivedExample]:
    """One derived example per expansion occurrence, in corpus then text order.

    ``sample`` keeps a seeded random subset of that size (order preserved).
    """
    if not len(inventory):
        raise CorpusError("sense inventory is empty")
    derived: list[DerivedExample] = []
    used: set[str] = set()
    for snippet in corpus:
        for start, end, acronym in find_expansions(snippet.text, inventory):
            text = snippet.text[:start] + acronym + snippet.text[end:]
            offset = len(snippet.text[:start].encode("utf-8"))
            sid = f"{snippet.id}@{offset}"
            if sid in used:
                sid = f"{sid}:{acronym}"
            used.add(sid)
            derived.append(DerivedExample(
                Snippet(sid, text, acronym), acronym, snippet.text[start:end],
                inventory[acronym], offset, snippet.id,
            ))
    if sample is not None and sample < len(derived):
        keep = set(random.Random(seed).sample(range(len(derived)), sample))
        derived = [d for i, d in enumerate(derived) if i in keep]
    return derived


def write_derived(examples: Iterable[DerivedExample], path) -> None:
    _write_lines(path, (d.to_json() for d in examples))


def load_derived(path) -> list[DerivedExample]:
    out = []
    for lineno, row in _rows(path):
        for name in ("text", "acronym", "label", "source_id"):
            _field(row, name, str, lineno, path)
        _str_list(row, "candidates", lineno, path, allow_empty=False)
        _field(row, "offset", int, lineno, path)
        out.append(DerivedExample.from_json(row))
    return out


def round_trip_violations(examples: Iterable[DerivedExample], sources: Mapping[str, Snippet]) -> list[str]:
    """Derived examples that do not reconstruct their source text exactly."""
    bad = []
    for d in examples:
        try:
            restored = d.reconstruct()
        except CorpusError as exc:
            bad.append(str(exc))
            continue
        if restored != sources[d.source_id].text:
            bad.append(f"{d.snippet.id}: reconstruction differs from {d.source_id}")
        elif d.label.casefold() not in (c.casefold() for c in d.candidates):
            bad.append(f"{d.snippet.id}: label {d.label!r} not among candidates")
    return bad
