"""Prompt templates, guided one-shot construction and the template registry."""

from __future__ import annotations

import enum
import json
import string
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional

from . import resolvers
from .core import (
    Choice,
    MedRecord,
    MedAttrRecords,
    MedStatusList,
    Snippet,
    Span,
    SpanList,
    Status,
    StructuredOutput,
    TaskKind,
    TokenLabels,
    bio_violations,
    output_from_json,
    output_to_json,
    span_text,
    tokenize,
)

PLACEHOLDERS = frozenset(("text", "side"))


class Mode(enum.Enum):
    COMPLETION = "completion"
    EDIT = "edit"


class TemplateError(ValueError):
    pass


class MissingSide(TemplateError):
    pass


class UnboundPlaceholder(TemplateError):
    pass


class UnsupportedTask(TemplateError):
    pass


def placeholders(fmt: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(fmt) if name is not None}


@dataclass(frozen=True)
class Demonstration:
    input_text: str
    formatted_answer: str
    side: str = ""
    expected: Optional[StructuredOutput] = None

    def to_json(self) -> dict:
        out = {"input_text": self.input_text, "side": self.side, "formatted_answer": self.formatted_answer}
        if self.expected is not None:
            out["expected"] = output_to_json(self.expected)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Demonstration":
        expected = data.get("expected")
        return cls(
            input_text=data["input_text"],
            formatted_answer=data["formatted_answer"],
            side=data.get("side", ""),
            expected=output_from_json(expected) if expected else None,
        )


@dataclass(frozen=True)
class PromptTemplate:
    task: TaskKind
    name: str
    mode: Mode
    instruction: str
    demonstration: Optional[Demonstration] = None
    answer_prefix: str = ""
    # whether the demonstration's content is correct; bookkeeping only
    demo_correct: Optional[bool] = None

    def __post_init__(self):
        if self.mode is Mode.EDIT:
            if self.demonstration is not None or self.answer_prefix:
                raise TemplateError(f"{self.key}: edit mode takes no demonstration or answer prefix")
            if "text" in placeholders(self.instruction):
                raise TemplateError(f"{self.key}: edit instructions cannot embed {{text}}")
        for fmt in (self.instruction, self.answer_prefix):
            unknown = placeholders(fmt) - PLACEHOLDERS
            if unknown:
                raise UnboundPlaceholder(f"{self.key}: unknown placeholders {sorted(unknown)}")
        if "text" in placeholders(self.answer_prefix):
            raise UnboundPlaceholder(f"{self.key}: answer prefix cannot embed {{text}}")

    @property
    def key(self) -> str:
        return f"{self.task.value}/{self.name}"

    @property
    def guided(self) -> bool:
        return self.demonstration is not None or bool(self.answer_prefix)

    @property
    def needs_side(self) -> bool:
        return "side" in placeholders(self.instruction) | placeholders(self.answer_prefix)

    def to_json(self) -> dict:
        return {
            "task": self.task.value,
            "name": self.name,
            "mode": self.mode.value,
            "instruction": self.instruction,
            "answer_prefix": self.answer_prefix,
            "demo_correct": self.demo_correct,
            "demonstration": self.demonstration.to_json() if self.demonstration else None,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PromptTemplate":
        demo = data.get("demonstration")
        return cls(
            task=TaskKind.parse(data["task"]),
            name=data["name"],
            mode=Mode(data["mode"]),
            instruction=data["instruction"],
            demonstration=Demonstration.from_json(demo) if demo else None,
            answer_prefix=data.get("answer_prefix") or "",
            demo_correct=data.get("demo_correct"),
        )


@dataclass(frozen=True)
class Prompt:
    """Filled prompt. For edit mode ``prompt`` is the document and ``instruction`` the edit."""

    prompt: str
    instruction: Optional[str] = None


def _render(fmt: str, text: str, side: str) -> str:
    return fmt.format(text=text, side=side)


def _query_block(template: PromptTemplate, text: str, side: str) -> str:
    if "text" in placeholders(template.instruction):
        return _render(template.instruction, text, side)
    return f"{text}\n\n{_render(template.instruction, text, side)}"


def fill(template: PromptTemplate, snippet: Snippet) -> Prompt:
    """Fill ``template`` for ``snippet``.

    Guided completion prompts follow the transcript layout: demonstration
    input, instruction, demonstration answer, then the query input,
    instruction and answer prefix, separated by blank lines.
    """
    if template.needs_side and not snippet.side:
        raise MissingSide(f"{template.key} needs side information but snippet {snippet.id!r} has none")
    if template.mode is Mode.EDIT:
        return Prompt(snippet.text, _render(template.instruction, snippet.text, snippet.side))
    blocks = []
    demo = template.demonstration
    if demo is not None:
        blocks.append(_query_block(template, demo.input_text, demo.side))
        blocks.append(demo.formatted_answer)
    blocks.append(_query_block(template, snippet.text, snippet.side))
    prompt = "\n\n".join(blocks)
    if template.answer_prefix:
        prompt += "\n\n" + _render(template.answer_prefix, snippet.text, snippet.side)
    return Prompt(prompt)


# --- canonical answer surfaces ----------------------------------------------

COREF_PREFIX = '"{side}" refers to "'


def _phrase_lines(text: str, labels) -> Iterator[str]:
    tokens = tokenize(text)
    if bio_violations(labels):
        raise TemplateError("demonstration labels are not valid BIO")
    i = 0
    while i < len(tokens):
        lab = labels[i]
        j = i + 1
        if lab.startswith("B-"):
            while j < len(tokens) and labels[j] == f"I-{lab[2:]}":
                j += 1
            kind = lab[2:]
        else:
            kind = "none"
        phrase = span_text(text, tokens[i].char_start, tokens[j - 1].char_end)
        yield f'-"{phrase}": {kind}'
        i = j


def _relation_line(record) -> str:
    parts = [f'medication: "{record.medication}"']
    parts += [f'{kind}: "{value}"' for kind, value in record.attributes()]
    return "-" + ", ".join(parts)


def format_answer(template: PromptTemplate, snippet: Snippet, answer: StructuredOutput) -> str:
    """Canonical machine-parseable surface of ``answer`` for a demonstration."""
    task = template.task
    if task is TaskKind.MEDICATION_STATUS and isinstance(answer, MedStatusList):
        return "\n".join(f'-"{name}" ({status.value})' for name, status in answer.items)
    if task is TaskKind.MED_ATTR_TOKEN and isinstance(answer, TokenLabels):
        tokens = tokenize(snippet.text)
        return "\n".join(f'-"{t.surface}": {lab}' for t, lab in zip(tokens, answer.labels))
    if task is TaskKind.MED_ATTR_PHRASE and isinstance(answer, TokenLabels):
        return "\n".join(_phrase_lines(snippet.text, answer.labels))
    if task is TaskKind.MED_ATTR_RELATION and isinstance(answer, MedAttrRecords):
        return "\n".join(_relation_line(r) for r in answer.records)
    if task is TaskKind.COREFERENCE and isinstance(answer, Span):
        prefix = template.answer_prefix or COREF_PREFIX
        return _render(prefix, snippet.text, snippet.side) + answer.text + '"'
    if task is TaskKind.ARM_IDENTIFICATION and isinstance(answer, SpanList):
        return "\n".join(f"- {arm}" for arm in answer.spans)
    if task in (TaskKind.SENSE_DISAMBIGUATION, TaskKind.EVIDENCE_TOKENS):
        raise UnsupportedTask(f"{task.value} takes no demonstration")
    raise TemplateError(f"{type(answer).__name__} does not fit task {task.value}")


def build_guided(
    template: PromptTemplate,
    demo_snippet: Snippet,
    demo_answer: StructuredOutput,
    correct: Optional[bool] = None,
) -> PromptTemplate:
    if template.mode is Mode.EDIT or template.task in (TaskKind.SENSE_DISAMBIGUATION, TaskKind.EVIDENCE_TOKENS):
        raise UnsupportedTask(f"{template.task.value} takes no demonstration")
    if isinstance(demo_answer, Choice):
        raise UnsupportedTask("choice outputs take no demonstration")
    prefix = template.answer_prefix
    if template.task is TaskKind.COREFERENCE and not prefix:
        prefix = COREF_PREFIX
    template = replace(template, answer_prefix=prefix)
    demo = Demonstration(
        input_text=demo_snippet.text,
        side=demo_snippet.side,
        formatted_answer=format_answer(template, demo_snippet, demo_answer),
        expected=demo_answer,
    )
    return replace(template, demonstration=demo, demo_correct=correct)


def resolve_guided_answer(template: PromptTemplate, snippet: Snippet, answer: str) -> StructuredOutput:
    """Run the task's guided resolver over a complete formatted answer.

    ``answer`` includes the answer prefix. Coreference resolves only the
    continuation after the prefix; list-shaped tasks resolve the whole answer.
    """
    task = template.task
    if task is TaskKind.COREFERENCE:
        prefix = _render(template.answer_prefix, snippet.text, snippet.side)
        if answer.startswith(prefix):
            answer = answer[len(prefix):]
        return resolvers.resolve_coref_guided(answer)
    if task is TaskKind.MEDICATION_STATUS:
        return resolvers.resolve_med_status_guided(answer)
    if task is TaskKind.MED_ATTR_TOKEN:
        return resolvers.resolve_med_attr_token(answer, tokenize(snippet.text))
    if task is TaskKind.MED_ATTR_PHRASE:
        return resolvers.resolve_med_attr_phrase(answer, tokenize(snippet.text))
    if task is TaskKind.MED_ATTR_RELATION:
        return resolvers.resolve_med_attr_relations(answer)
    if task is TaskKind.ARM_IDENTIFICATION:
        return resolvers.resolve_arms(answer)
    raise UnsupportedTask(f"{task.value} has no guided resolver")


def demonstration_round_trip(template: PromptTemplate) -> bool:
    demo = template.demonstration
    if demo is None or demo.expected is None:
        return True
    snippet = Snippet("demo", demo.input_text, demo.side)
    try:
        return resolve_guided_answer(template, snippet, demo.formatted_answer) == demo.expected
    except resolvers.EmptySpan:
        return False


# --- registry ---------------------------------------------------------------

class TemplateRegistry:
    """Templates keyed by ``task/name``; registration validates demonstrations."""

    def __init__(self):
        self._templates: dict[str, PromptTemplate] = {}

    def register(self, template: PromptTemplate) -> PromptTemplate:
        demo = template.demonstration
        if demo is not None:
            if not demo.formatted_answer.strip():
                raise TemplateError(f"{template.key}: empty demonstration answer")
            if template.needs_side and not demo.side:
                raise MissingSide(f"{template.key}: demonstration lacks side information")
            if not demonstration_round_trip(template):
                raise TemplateError(f"{template.key}: demonstration answer does not round-trip")
        self._templates[template.key] = template
        return template

    def get(self, task: TaskKind, name: str) -> PromptTemplate:
        key = f"{TaskKind.parse(task).value}/{name}"
        try:
            return self._templates[key]
        except KeyError:
            raise KeyError(f"no template {key!r}; have {sorted(self._templates)}") from None

    def __iter__(self):
        return iter(self._templates[k] for k in sorted(self._templates))

    def __len__(self):
        return len(self._templates)

    def to_json(self) -> dict:
        return {k: self._templates[k].to_json() for k in sorted(self._templates)}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TemplateRegistry":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        registry = cls()
        for key, entry in data.items():
            template = PromptTemplate.from_json(entry)
            if template.key != key:
                raise TemplateError(f"registry key {key!r} does not match template {template.key!r}")
            registry.register(template)
        return registry


ARM_INSTRUCTION = "Create a bulleted list of the arms in this trial."
STATUS_INSTRUCTION = (
    "Create a bulleted list of which medications are mentioned and whether they are "
    "active, discontinued, or neither."
)
TOKEN_INSTRUCTION = (
    "Label the tokens: medication, dosage, route, frequency, duration, reason, or none. Ignore allergies."
)
PHRASE_INSTRUCTION = (
    "Label the tokens: medication, dosage, route, frequency, duration, reason, or none. "
    "Chunk the same entity together. Ignore allergies."
)
RELATION_INSTRUCTION = (
    "Label medications, ignoring allergies. Include dosage, route, frequency, duration, reason, if available."
)

CEA_DEMO = Snippet(
    "demo-coref",
    "ASSESSMENT & PLAN: The patient has no physical evidence of progression of disease. "
    "It is somewhat worrisome that her CEA is up, but will be keep watching that to see if it "
    "is just within a normal swing for her.",
    "that",
)
ATIVAN_DEMO_CORRECT = Snippet(
    "demo-status-correct",
    "start her on Ativan 1 mg p.o. q. 8 hours and use Ativan 1 mg IV q. 4 hours p.r.n. for "
    "agitation. I will also start her on Inderal LA 60 mg p.o. q.d. for essential tremors. She "
    "does not want to take Celexa, and I will put her back on Lexapro 2 mg p.o. q.d.",
)
ATIVAN_DEMO_INCORRECT = Snippet(
    "demo-status-incorrect",
    ATIVAN_DEMO_CORRECT.text + " I will discontinue Esmolol.",
)
LISINOPRIL_DEMO = Snippet(
    "demo-med-attr",
    "Continue lisinopril 10 mg orally daily for 3 months for hypertension.",
)
# tokens: Continue lisinopril 10 mg orally daily for 3 months for hypertension .
LISINOPRIL_TOKEN_LABELS = (
    "none", "medication", "dosage", "dosage", "route", "frequency",
    "none", "duration", "duration", "none", "reason", "none",
)
LISINOPRIL_BIO = (
    "O", "B-medication", "B-dosage", "I-dosage", "B-route", "B-frequency",
    "O", "B-duration", "I-duration", "O", "B-reason", "O",
)


def default_registry() -> TemplateRegistry:
    """Hand-authored templates for every task, with the transcript demonstrations."""
    reg = TemplateRegistry()
    C = Mode.COMPLETION
    reg.register(PromptTemplate(TaskKind.SENSE_DISAMBIGUATION, "expand", Mode.EDIT,
                                "Expand the abbreviation: {side}"))
    reg.register(PromptTemplate(TaskKind.ARM_IDENTIFICATION, "bulleted-list", C, ARM_INSTRUCTION))
    reg.register(PromptTemplate(TaskKind.EVIDENCE_TOKENS, "bulleted-list", C, ARM_INSTRUCTION))

    coref = PromptTemplate(TaskKind.COREFERENCE, "zero-shot", C, 'What does "{side}" refer to?')
    reg.register(coref)
    reg.register(build_guided(replace(coref, name="one-shot-correct"), CEA_DEMO, Span("her CEA"), True))
    reg.register(build_guided(replace(coref, name="one-shot-incorrect"), CEA_DEMO,
                              Span("progression of disease"), False))

    status = PromptTemplate(TaskKind.MEDICATION_STATUS, "zero-shot", C, STATUS_INSTRUCTION)
    reg.register(status)
    guided_status = replace(status, name="zero-shot-guided", answer_prefix='-"')
    reg.register(guided_status)
    reg.register(build_guided(
        replace(guided_status, name="one-shot-correct"), ATIVAN_DEMO_CORRECT,
        MedStatusList((("Ativan", Status.ACTIVE), ("Inderal LA", Status.ACTIVE),
                       ("Lexapro", Status.ACTIVE), ("Celexa", Status.NEITHER))),
        True,
    ))
    reg.register(build_guided(
        replace(guided_status, name="one-shot-incorrect"), ATIVAN_DEMO_INCORRECT,
        MedStatusList((("Ativan", Status.DISCONTINUED), ("Inderal LA", Status.ACTIVE),
                       ("Celexa", Status.NEITHER), ("Lexapro", Status.ACTIVE),
                       ("Esmolol", Status.ACTIVE))),
        False,
    ))

    reg.register(build_guided(
        PromptTemplate(TaskKind.MED_ATTR_TOKEN, "one-shot", C, TOKEN_INSTRUCTION, answer_prefix='-"'),
        LISINOPRIL_DEMO, TokenLabels(LISINOPRIL_TOKEN_LABELS), True,
    ))
    reg.register(build_guided(
        PromptTemplate(TaskKind.MED_ATTR_PHRASE, "one-shot", C, PHRASE_INSTRUCTION, answer_prefix='-"'),
        LISINOPRIL_DEMO, TokenLabels(LISINOPRIL_BIO), True,
    ))
    reg.register(build_guided(
        PromptTemplate(TaskKind.MED_ATTR_RELATION, "one-shot", C, RELATION_INSTRUCTION, answer_prefix="-"),
        LISINOPRIL_DEMO,
        MedAttrRecords((MedRecord("lisinopril", dosage=("10 mg",), route=("orally",),
                                  frequency=("daily",), duration=("3 months",),
                                  reason=("hypertension",)),)),
        True,
    ))
    return reg

