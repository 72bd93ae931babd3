"""End-to-end wiring: template fill, text generation, resolution and evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from . import metrics, resolvers
from .core import (
    Choice,
    MedAttrRecords,
    MedStatusList,
    Snippet,
    Span,
    SpanList,
    StructuredOutput,
    TaskKind,
    TokenLabels,
    output_from_json,
    output_to_json,
    tokenize,
)
from .gateway import COMPLETION_ENGINE, EDIT_ENGINE, GatewayError, LlmRequest
from .prompting import Mode, PromptTemplate, fill

# sense runs in edit mode, where the API takes no length limit
DEFAULT_MAX_TOKENS = {
    TaskKind.SENSE_DISAMBIGUATION: 0,
    TaskKind.EVIDENCE_TOKENS: 128,
    TaskKind.ARM_IDENTIFICATION: 128,
    TaskKind.COREFERENCE: 64,
    TaskKind.MEDICATION_STATUS: 256,
    TaskKind.MED_ATTR_TOKEN: 1024,
    TaskKind.MED_ATTR_PHRASE: 1024,
    TaskKind.MED_ATTR_RELATION: 1024,
}

DEFAULT_TEMPLATE = {
    TaskKind.SENSE_DISAMBIGUATION: "expand",
    TaskKind.EVIDENCE_TOKENS: "bulleted-list",
    TaskKind.ARM_IDENTIFICATION: "bulleted-list",
    TaskKind.COREFERENCE: "one-shot-correct",
    TaskKind.MEDICATION_STATUS: "one-shot-correct",
    TaskKind.MED_ATTR_TOKEN: "one-shot",
    TaskKind.MED_ATTR_PHRASE: "one-shot",
    TaskKind.MED_ATTR_RELATION: "one-shot",
}

_PREFIXED = (TaskKind.MEDICATION_STATUS, TaskKind.MED_ATTR_TOKEN,
             TaskKind.MED_ATTR_PHRASE, TaskKind.MED_ATTR_RELATION)


def build_request(template: PromptTemplate, snippet: Snippet, max_tokens: Optional[int] = None) -> LlmRequest:
    prompt = fill(template, snippet)
    if max_tokens is None:
        max_tokens = DEFAULT_MAX_TOKENS[template.task]
    if template.mode is Mode.EDIT:
        return LlmRequest(Mode.EDIT, prompt.prompt, EDIT_ENGINE, 0.0, max_tokens, prompt.instruction)
    return LlmRequest(Mode.COMPLETION, prompt.prompt, COMPLETION_ENGINE, 0.0, max_tokens)


def resolve(
    template: PromptTemplate,
    raw: str,
    snippet: Snippet,
    candidates: Optional[Sequence[str]] = None,
    gap: Optional[int] = 1,
) -> StructuredOutput:
    """Map a raw generation for ``snippet`` into the task's output space.

    For guided list-shaped tasks the answer prefix is part of the first
    answer line, so it is put back before resolving.
    """
    task = template.task
    if task is TaskKind.SENSE_DISAMBIGUATION:
        if not candidates:
            raise ValueError(f"{snippet.id}: sense disambiguation needs a candidate list")
        return resolvers.resolve_sense(raw, candidates, original=snippet.text)
    if task is TaskKind.EVIDENCE_TOKENS:
        return resolvers.resolve_evidence_tokens(raw, tokenize(snippet.text), gap)
    if task is TaskKind.ARM_IDENTIFICATION:
        return resolvers.resolve_arms(raw)
    if task is TaskKind.COREFERENCE:
        if template.guided:
            return resolvers.resolve_coref_guided(raw)
        return resolvers.resolve_coref_unguided(raw, snippet)
    if task in _PREFIXED and template.answer_prefix:
        raw = template.answer_prefix.format(text=snippet.text, side=snippet.side) + raw
    if task is TaskKind.MEDICATION_STATUS:
        if template.guided:
            return resolvers.resolve_med_status_guided(raw)
        return resolvers.resolve_med_status_unguided(raw, snippet)
    if task is TaskKind.MED_ATTR_TOKEN:
        return resolvers.resolve_med_attr_token(raw, tokenize(snippet.text))
    if task is TaskKind.MED_ATTR_PHRASE:
        return resolvers.resolve_med_attr_phrase(raw, tokenize(snippet.text))
    return resolvers.resolve_med_attr_relations(raw)


@dataclass
class Prediction:
    id: str
    raw_output: Optional[str]
    structured_output: Optional[StructuredOutput]
    diagnostics: dict = field(default_factory=dict)
    # gateway failures; resolver failures are soft and live in diagnostics
    hard_error: Optional[Exception] = None

    def to_line(self) -> str:
        out = output_to_json(self.structured_output) if self.structured_output is not None else None
        row = {"id": self.id, "raw_output": self.raw_output, "structured_output": out,
               "diagnostics": self.diagnostics}
        return json.dumps(row, ensure_ascii=False)


def predict(
    backend,
    template: PromptTemplate,
    snippet: Snippet,
    candidates: Optional[Sequence[str]] = None,
    gap: Optional[int] = 1,
    max_tokens: Optional[int] = None,
) -> Prediction:
    request = build_request(template, snippet, max_tokens)
    try:
        raw = backend.generate(request)
    except GatewayError as exc:
        return Prediction(snippet.id, None, None, {"error": str(exc)}, exc)
    try:
        out = resolve(template, raw, snippet, candidates, gap)
    except (ValueError, resolvers.EmptySpan) as exc:
        return Prediction(snippet.id, raw, None, {"resolver_error": str(exc)})
    return Prediction(snippet.id, raw, out, dict(out.diagnostics))


def load_predictions(path) -> dict[str, Optional[StructuredOutput]]:
    """Prediction file to ``id -> structured output`` (None where resolution failed)."""
    out: dict[str, Optional[StructuredOutput]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                so = row["structured_output"]
                out[row["id"]] = output_from_json(so) if so is not None else None
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad prediction line: {exc}") from exc
    return out


# --- evaluation -------------------------------------------------------------

def _fallback(task: TaskKind, gold_entry: StructuredOutput) -> StructuredOutput:
    """Stand-in for a missing prediction: scores as wrong/empty."""
    if task is TaskKind.SENSE_DISAMBIGUATION:
        return Choice(-1)
    if isinstance(gold_entry, TokenLabels):
        blank = {TaskKind.EVIDENCE_TOKENS: 0, TaskKind.MED_ATTR_TOKEN: "none"}.get(task, "O")
        return TokenLabels((blank,) * len(gold_entry.labels))
    return {TaskKind.ARM_IDENTIFICATION: SpanList(()), TaskKind.COREFERENCE: Span(""),
            TaskKind.MEDICATION_STATUS: MedStatusList(()),
            TaskKind.MED_ATTR_RELATION: MedAttrRecords(())}[task]


def evaluate(task: TaskKind, preds: Mapping[str, Optional[StructuredOutput]], gold) -> dict:
    """Task metrics for ``preds`` against a :class:`~clinex.corpus.GoldSet`.

    Raises :class:`~clinex.metrics.MismatchedIds` unless the id sets agree.
    """
    metrics.check_ids(preds, gold.entries)
    ids = list(gold.entries)
    filled = {i: preds[i] if preds[i] is not None else _fallback(task, gold.entries[i]) for i in ids}
    for i in ids:
        expected = type(gold.entries[i])
        if not isinstance(filled[i], expected):
            raise metrics.MetricError(f"{i}: prediction is {type(filled[i]).__name__}, expected {expected.__name__}")
    report: dict = {"task": task.value, "n": len(ids),
                    "unresolved": sum(1 for i in ids if preds[i] is None)}
    if task is TaskKind.SENSE_DISAMBIGUATION:
        grouped = metrics.grouped_accuracy_macro_f1(
            {i: filled[i].index for i in ids}, {i: gold.entries[i].index for i in ids}, gold.acronyms)
        report.update(grouped.to_json())
    elif task is TaskKind.EVIDENCE_TOKENS:
        report["token"] = metrics.corpus_token_f1(
            (filled[i].labels, gold.entries[i].labels) for i in ids).to_json()
    elif task is TaskKind.ARM_IDENTIFICATION:
        report.update(metrics.corpus_arm_accuracy(
            [metrics.arm_accuracy(filled[i].spans, gold.entries[i].spans) for i in ids]))
    elif task is TaskKind.COREFERENCE:
        report["unigram"] = metrics.corpus_unigram(
            (filled[i].text, gold.antecedents.get(i) or gold.entries[i].text) for i in ids)
    elif task is TaskKind.MEDICATION_STATUS:
        p, g = [filled[i] for i in ids], [gold.entries[i] for i in ids]
        report["extraction"] = metrics.med_micro_pr(p, g)
        report["status"] = metrics.conditional_status_eval({"system": p}, g).to_json()
    elif task is TaskKind.MED_ATTR_TOKEN:
        report["per_type"] = metrics.prf_table(metrics.typed_token_f1(
            [filled[i].labels for i in ids], [gold.entries[i].labels for i in ids]))
    elif task is TaskKind.MED_ATTR_PHRASE:
        report["per_type"] = metrics.prf_table(metrics.phrase_f1(
            [filled[i].labels for i in ids], [gold.entries[i].labels for i in ids]))
    else:
        report["per_type"] = metrics.prf_table(metrics.relation_f1(
            [filled[i].records for i in ids], [gold.entries[i].records for i in ids]))
    return report


def headline(report: dict) -> dict[str, float]:
    """Flat ``metric -> value`` view used for CSV output."""
    flat: dict[str, float] = {}

    def walk(prefix, node):
        if isinstance(node, dict):
            for k, v in node.items():
                walk(f"{prefix}.{k}" if prefix else str(k), v)
        elif isinstance(node, (int, float)) and not isinstance(node, bool):
            flat[prefix] = node
    walk("", {k: v for k, v in report.items() if k != "task"})
    return flat
