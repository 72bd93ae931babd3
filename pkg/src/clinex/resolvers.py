"""Resolvers: map raw LLM strings onto each task's structured output space.

Every resolver is a pure function of its arguments. Parse problems never raise
(except an empty guided coreference span); they are counted in the returned
output's ``diagnostics``.
"""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .core import (
    MED_ATTR_TOKEN_LABELS,
    MED_ATTR_TYPES,
    PUNCTUATION,
    Choice,
    MedAttrRecords,
    MedRecord,
    MedStatusList,
    Snippet,
    Span,
    SpanList,
    Status,
    Token,
    TokenLabels,
    tokenize,
)
from .stopwords import ENGLISH_STOPWORDS, EVIDENCE_EXTRAS


class EmptySpan(ValueError):
    pass


@dataclass(frozen=True)
class SenseCandidates:
    acronym: str
    expansions: tuple

    def __post_init__(self):
        object.__setattr__(self, "expansions", tuple(self.expansions))
        if not self.expansions:
            raise ValueError(f"no expansions for {self.acronym!r}")
        folded = [e.casefold() for e in self.expansions]
        if len(set(folded)) != len(folded):
            raise ValueError(f"duplicate expansions for {self.acronym!r}")


# bullet ("-", "*", "•") or enumeration ("1.", "2)") at the start of a line
LIST_MARKER = re.compile(r"^\s*(?:[-*•‣▪]+|\(?\d+[.)](?!\d))\s*")


def _strip_marker(line: str) -> str:
    return LIST_MARKER.sub("", line, count=1).strip()


def _is_punct(tok: str) -> bool:
    return all(c in PUNCTUATION or not c.isalnum() for c in tok)


# --- sense disambiguation ---------------------------------------------------

def longest_common_substring_len(a: str, b: str) -> int:
    """Length of the longest contiguous run shared by ``a`` and ``b`` (case-folded)."""
    a, b = a.casefold(), b.casefold()
    if len(b) > len(a):
        a, b = b, a
    if not b:
        return 0
    best = 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0] * (len(b) + 1)
        for j, cb in enumerate(b, 1):
            if ca == cb:
                v = prev[j - 1] + 1
                cur[j] = v
                if v > best:
                    best = v
        prev = cur
    return best


_UNIT = re.compile(r"\w+|[^\w\s]")


def edit_region(original: str, edited: str) -> Optional[str]:
    """Longest stretch of ``edited`` that replaced or was inserted into ``original``.

    Diffing runs over word/punctuation units so a rewritten acronym comes back
    as whole words. Returns None when nothing changed.
    """
    a = [m.group() for m in _UNIT.finditer(original)]
    b_units = list(_UNIT.finditer(edited))
    b = [m.group() for m in b_units]
    matcher = difflib.SequenceMatcher(None, a, b, autojunk=False)
    best = None
    for tag, _i1, _i2, j1, j2 in matcher.get_opcodes():
        if tag == "equal" or j1 == j2:
            continue
        start, end = b_units[j1].start(), b_units[j2 - 1].end()
        if best is None or end - start > best[1] - best[0]:
            best = (start, end)
    if best is None:
        return None
    return edited[best[0]:best[1]]


def resolve_sense(
    llm_output: str,
    candidates: Union[SenseCandidates, Sequence[str]],
    original: Optional[str] = None,
) -> Choice:
    """Pick the candidate with the highest contiguous character overlap.

    With ``original`` (edit mode) the overlap is measured against the edited
    region only, falling back to the whole output when no edit is found.
    Ties go to the lowest index. ``diagnostics["overlap"]`` carries the winning
    overlap length.
    """
    expansions = candidates.expansions if isinstance(candidates, SenseCandidates) else tuple(candidates)
    if not expansions:
        raise ValueError("empty candidate list")
    target = llm_output
    used_region = 0
    if original is not None:
        region = edit_region(original, llm_output)
        if region:
            target, used_region = region, 1
    best_index, best = 0, -1
    for i, cand in enumerate(expansions):
        overlap = longest_common_substring_len(target, cand)
        if overlap > best:
            best_index, best = i, overlap
    return Choice(best_index, {"overlap": best, "edit_region": used_region})


# --- evidence extraction ----------------------------------------------------

def _is_evidence_noise(tok: str) -> bool:
    low = tok.casefold()
    return _is_punct(tok) or low in ENGLISH_STOPWORDS or low in EVIDENCE_EXTRAS


def _is_acronym(tok: str) -> bool:
    return any(c.isalpha() for c in tok) and tok == tok.upper()


def resolve_evidence_tokens(
    llm_output: str,
    input_tokens: Sequence[Token],
    max_gap: Optional[int] = 1,
) -> TokenLabels:
    """Binary intervention labels over ``input_tokens`` from a bulleted arm list.

    ``max_gap`` bounds the zero-runs filled between ones; None fills any gap.
    """
    vocab = set()
    dropped = 0
    for line in llm_output.splitlines():
        for tok in tokenize(_strip_marker(line)):
            if _is_evidence_noise(tok.surface):
                dropped += 1
            else:
                vocab.add(tok.surface.casefold())
    labels = [1 if t.surface.casefold() in vocab else 0 for t in input_tokens]
    matched = sum(labels)

    ones = [i for i, v in enumerate(labels) if v]
    filled = 0
    for left, right in zip(ones, ones[1:]):
        gap = right - left - 1
        if 0 < gap and (max_gap is None or gap <= max_gap):
            for k in range(left + 1, right):
                labels[k] = 1
            filled += gap

    acronyms = 0
    for i in range(1, len(input_tokens) - 2):
        if (
            input_tokens[i].surface == "("
            and input_tokens[i + 2].surface == ")"
            and labels[i - 1] == 1
            and _is_acronym(input_tokens[i + 1].surface)
            and not all(labels[i:i + 3])
        ):
            labels[i:i + 3] = [1, 1, 1]
            acronyms += 1
    return TokenLabels(
        tuple(labels),
        {"matched": matched, "gap_filled": filled, "acronym_filled": acronyms, "dropped_output_tokens": dropped},
    )


def resolve_arms(llm_output: str) -> SpanList:
    arms = [_strip_marker(line) for line in llm_output.splitlines()]
    return SpanList(tuple(a for a in arms if a))


# --- coreference ------------------------------------------------------------

def resolve_coref_guided(llm_output: str) -> Span:
    """Continuation of a prompt ending in an opening quote: drop the trailing quote run."""
    span = llm_output.rstrip("\"'. ")
    if not span:
        raise EmptySpan(f"nothing left of {llm_output!r}")
    return Span(span)


_QUOTED = re.compile(r"[\"“”]([^\"“”]+)[\"“”]")
_REFERS = re.compile(r"\brefer(?:s|ring)?\s+to\b", re.IGNORECASE)


def _coref_candidate(llm_output: str) -> str:
    quoted = _QUOTED.findall(llm_output)
    if quoted:
        return quoted[-1]
    markers = list(_REFERS.finditer(llm_output))
    if markers:
        return llm_output[markers[-1].end():]
    return llm_output


def resolve_coref_unguided(llm_output: str, snippet: Snippet) -> Span:
    """Map a free-form answer back to the longest run of it found in the input.

    Runs made only of stopwords and punctuation are ignored; ties go to the
    leftmost run. If nothing aligns, the candidate comes back as-is with
    ``diagnostics["unaligned"] == 1``.
    """
    candidate = _coref_candidate(llm_output).strip().strip("\"'.,;: ")
    cand = [t.surface.casefold() for t in tokenize(candidate)]
    src_tokens = tokenize(snippet.text)
    src = [t.surface.casefold() for t in src_tokens]

    best = None  # (length, start in candidate, start in source)
    for i in range(len(cand)):
        for j in range(len(src)):
            n = 0
            while i + n < len(cand) and j + n < len(src) and cand[i + n] == src[j + n]:
                n += 1
            if n == 0:
                continue
            run = cand[i:i + n]
            if all(_is_punct(t) or t in ENGLISH_STOPWORDS for t in run):
                continue
            if best is None or n > best[0]:
                best = (n, i, j)
    if best is None:
        return Span(candidate, {"unaligned": 1})
    n, _, j = best
    data = snippet.text.encode("utf-8")
    aligned = data[src_tokens[j].char_start:src_tokens[j + n - 1].char_end].decode("utf-8")
    return Span(aligned, {"unaligned": 0})


# --- medication status ------------------------------------------------------

_STATUS = r"(active|discontinued|neither)"
_GUIDED_LINE = re.compile(r'^\s*(?:[-*•]\s*)?"?([^"]*?)"?\s*\(\s*([^()]*?)\s*\)\s*\.?\s*$')


def _dedup(items):
    seen = set()
    out = []
    for name, status in items:
        key = name.casefold()
        if key not in seen:
            seen.add(key)
            out.append((name, status))
    return out


def resolve_med_status_guided(llm_output: str) -> MedStatusList:
    """Parse ``-"NAME" (STATUS)`` lines; anything else is counted as unparseable."""
    items = []
    unparseable = 0
    for line in llm_output.splitlines():
        if not line.strip():
            continue
        m = _GUIDED_LINE.match(line)
        if not m or not m.group(1).strip():
            unparseable += 1
            continue
        try:
            status = Status.parse(m.group(2))
        except ValueError:
            unparseable += 1
            continue
        items.append((m.group(1).strip(), status))
    deduped = _dedup(items)
    return MedStatusList(
        tuple(deduped), {"unparseable": unparseable, "duplicates": len(items) - len(deduped)}
    )


_ITEM_SPLIT = re.compile(r",(?!\d{3}(?!\d))")
_GROUP_HEAD = re.compile(rf"^{_STATUS}\s*:\s*(.*)$", re.IGNORECASE)
_MED_COLON = re.compile(rf"^(.*?\S)\s*:\s*{_STATUS}\W*$", re.IGNORECASE)
_MED_PAREN = re.compile(rf"^(.*?\S)\s*\(\s*{_STATUS}\s*\)\W*$", re.IGNORECASE)

# dosage and route noise stripped from medication names
DOSAGE_PATTERN = re.compile(
    r"(?<!\w)\d+(?:[.,]\d+)?\s*(?:mg|mcg|g|ml|units?|iu|meq|%)(?!\w)", re.IGNORECASE
)
ROUTE_PATTERN = re.compile(
    r"(?<!\w)(?:p\.o\.?|po|i\.v\.?|iv|im|sq|subq|patch(?:es)?|puffs?|tablets?|tabs?|capsules?)(?!\w)",
    re.IGNORECASE,
)


def _occurs(tokens: Sequence[str], text: str) -> Optional[re.Match]:
    pattern = r"(?<!\w)" + r"\s+".join(re.escape(t) for t in tokens) + r"(?!\w)"
    return re.search(pattern, text, re.IGNORECASE)


def denoise_med_name(name: str, text: str) -> Optional[str]:
    """Strip dosage/route noise and keep the longest piece that occurs in ``text``.

    Returns the matching slice of ``text`` itself, or None when nothing survives.
    """
    cleaned = ROUTE_PATTERN.sub(" ", DOSAGE_PATTERN.sub(" ", name))
    toks = [t.surface for t in tokenize(cleaned) if not _is_punct(t.surface)]
    toks = [t for t in toks if _occurs([t], text)]
    for length in range(len(toks), 0, -1):
        for start in range(len(toks) - length + 1):
            run = toks[start:start + length]
            m = _occurs(run, text)
            if m is None:
                continue
            found = m.group()
            words = [t.casefold() for t in run]
            if all(w in ENGLISH_STOPWORDS for w in words):
                continue
            noise = sum(1 for c in found if c.isspace() or not c.isalnum())
            if noise * 2 > len(found):
                continue
            return found
    return None


def _clean_item(item: str) -> str:
    return _strip_marker(item).strip().strip("\"'").strip()


def resolve_med_status_unguided(llm_output: str, snippet: Snippet) -> MedStatusList:
    """Parse free-form status lists (``Med: Status``, ``Med (Status)``, ``Status: a, b``)."""
    items = []
    unparsed = dropped = 0
    group: Optional[Status] = None
    for raw in _ITEM_SPLIT.split(llm_output.replace("\n", ",")):
        item = _clean_item(raw)
        if not item:
            continue
        name = None
        m = _GROUP_HEAD.match(item)
        if m:
            group = Status.parse(m.group(1))
            name, status = _clean_item(m.group(2)), group
        elif (m := _MED_COLON.match(item)) or (m := _MED_PAREN.match(item)):
            name, status = _clean_item(m.group(1)), Status.parse(m.group(2))
        elif group is not None:
            name, status = item, group
        else:
            unparsed += 1
            continue
        if not name:
            continue
        clean = denoise_med_name(name, snippet.text)
        if clean is None:
            dropped += 1
            continue
        items.append((clean, status))
    deduped = _dedup(items)
    return MedStatusList(
        tuple(deduped),
        {"unparsed": unparsed, "dropped": dropped, "duplicates": len(items) - len(deduped)},
    )


# --- medication attributes --------------------------------------------------

_LABEL_ALIASES = {"dose": "dosage"}


def _parse_label_line(line: str):
    body, sep, label = line.rpartition(":")
    if not sep:
        return None
    body = re.sub(r"^\s*[-*•]\s*", "", body, count=1).strip()
    if body.startswith('"'):
        body = body[1:]
    if body.endswith('"'):
        body = body[:-1]
    if not body.strip():
        return None
    return body, label.strip().strip('"').casefold()


def _align(span: Sequence[str], source: Sequence[str], consumed: list, cursor: int) -> Optional[int]:
    n = len(span)
    starts = list(range(cursor, len(source) - n + 1)) + list(range(0, min(cursor, len(source) - n + 1)))
    for s in starts:
        if all(not consumed[s + k] and source[s + k] == span[k] for k in range(n)):
            return s
    return None


def _label_lines(llm_output: str, input_tokens: Sequence[Token]):
    """Yield (start, end, label) for every aligned labeled line; count problems."""
    source = [t.surface.casefold() for t in input_tokens]
    consumed = [False] * len(source)
    cursor = 0
    stats = {"unparseable": 0, "misaligned": 0, "out_of_space": 0}
    aligned = []
    for line in llm_output.splitlines():
        if not line.strip():
            continue
        parsed = _parse_label_line(line)
        if parsed is None:
            stats["unparseable"] += 1
            continue
        text, label = parsed
        label = _LABEL_ALIASES.get(label, label)
        if label not in MED_ATTR_TOKEN_LABELS:
            stats["out_of_space"] += 1
            label = "none"
        span = [t.surface.casefold() for t in tokenize(text)]
        start = _align(span, source, consumed, cursor) if span else None
        if start is None:
            stats["misaligned"] += 1
            continue
        end = start + len(span)
        for k in range(start, end):
            consumed[k] = True
        cursor = end
        aligned.append((start, end, label))
    return aligned, stats


def resolve_med_attr_token(llm_output: str, input_tokens: Sequence[Token]) -> TokenLabels:
    labels = ["none"] * len(input_tokens)
    aligned, stats = _label_lines(llm_output, input_tokens)
    for start, end, label in aligned:
        for k in range(start, end):
            labels[k] = label
    return TokenLabels(tuple(labels), stats)


def resolve_med_attr_phrase(llm_output: str, input_tokens: Sequence[Token]) -> TokenLabels:
    labels = ["O"] * len(input_tokens)
    aligned, stats = _label_lines(llm_output, input_tokens)
    for start, end, label in aligned:
        if label == "none":
            continue
        labels[start] = f"B-{label}"
        for k in range(start + 1, end):
            labels[k] = f"I-{label}"
    return TokenLabels(tuple(labels), stats)


_KEY_VALUE = re.compile(r'([A-Za-z_]+)\s*:\s*"([^"\n]*)"')


def resolve_med_attr_relations(llm_output: str) -> MedAttrRecords:
    """One record per line; every attribute on a line belongs to that line's medication."""
    records = []
    skipped = unknown = 0
    for line in llm_output.splitlines():
        pairs = [(k.casefold(), v.strip()) for k, v in _KEY_VALUE.findall(line)]
        if not pairs:
            if line.strip():
                skipped += 1
            continue
        meds = [v for k, v in pairs if k == "medication" and v]
        if not meds:
            skipped += 1
            continue
        attrs: dict = {}
        for key, value in pairs:
            key = _LABEL_ALIASES.get(key, key)
            if key == "medication" or not value:
                continue
            if key not in MED_ATTR_TYPES:
                unknown += 1
                continue
            attrs.setdefault(key, []).append(value)
        unknown += len(meds) - 1
        records.append(MedRecord(meds[0], **{k: tuple(v) for k, v in attrs.items()}))
    return MedAttrRecords(tuple(records), {"skipped_lines": skipped, "unknown_keys": unknown})
