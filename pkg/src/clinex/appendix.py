"""Worked transcript fixtures: snippets, recorded responses and hand-derived outputs.

``cases.json`` is the hand-written source. :func:`build` turns it into the
files the command line consumes: per-task snippet files, a replay store with
its checksum sidecar, and per-task gold files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import corpus
from .core import Snippet, StructuredOutput, TaskKind, output_from_json, tokenize
from .gateway import ReplayStore, record
from .pipeline import build_request
from .prompting import TemplateRegistry, default_registry

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "appendix"
RECORDED_AT = "2022-10-01T00:00:00Z"


@dataclass(frozen=True)
class Case:
    task: TaskKind
    template: str
    snippet: Snippet
    response: str
    expected: StructuredOutput


def load_cases(directory: Path = FIXTURE_DIR):
    """Return ``(snippets by id, inventory, cases)`` from ``cases.json``."""
    data = json.loads((Path(directory) / "cases.json").read_text(encoding="utf-8"))
    snippets = {s["id"]: Snippet(s["id"], s["text"], s.get("side", "")) for s in data["snippets"]}
    inventory = corpus.SenseInventory(data["inventory"])
    cases = [Case(TaskKind.parse(c["task"]), c["template"], snippets[c["snippet"]], c["response"],
                  output_from_json(c["expected"])) for c in data["cases"]]
    return snippets, inventory, cases


def snippet_file(directory: Path, task: TaskKind) -> Path:
    return Path(directory) / f"snippets_{task.value}.jsonl"


def gold_file(directory: Path, task: TaskKind) -> Path:
    return Path(directory) / "gold" / f"{task.value}.jsonl"


def store_file(directory: Path) -> Path:
    return Path(directory) / "store.jsonl"


def _gold(task: TaskKind, cases, inventory) -> corpus.GoldSet:
    gold = corpus.GoldSet(task)
    # the first case per snippet carries the reference answer
    for case in cases:
        sid = case.snippet.id
        if case.task is not task or sid in gold.entries:
            continue
        gold.entries[sid] = case.expected
        if task is TaskKind.SENSE_DISAMBIGUATION:
            gold.candidates[sid] = inventory[case.snippet.side]
            gold.acronyms[sid] = case.snippet.side
        elif task is TaskKind.COREFERENCE:
            gold.antecedents[sid] = (case.expected.text,)
            gold.pronouns[sid] = case.snippet.side
        elif task in (TaskKind.EVIDENCE_TOKENS, TaskKind.MED_ATTR_TOKEN, TaskKind.MED_ATTR_PHRASE):
            gold.tokens[sid] = tuple(t.surface for t in tokenize(case.snippet.text))
    return gold


def build(directory: Path = FIXTURE_DIR, registry: TemplateRegistry = None) -> int:
    """Regenerate snippet, store and gold files; returns the number of exchanges."""
    directory = Path(directory)
    registry = registry or default_registry()
    _, inventory, cases = load_cases(directory)
    corpus.write_inventory(inventory, directory / "inventory.json")
    (directory / "gold").mkdir(exist_ok=True)
    for task in TaskKind:
        members = []
        for c in cases:
            if c.task is task and c.snippet not in members:
                members.append(c.snippet)
        if members:
            corpus.write_snippets(members, snippet_file(directory, task))
            corpus.write_gold(_gold(task, cases, inventory), gold_file(directory, task))
    path = store_file(directory)
    for p in (path, path.with_name(path.name + ".sha256")):
        if p.exists():
            p.unlink()
    store = ReplayStore(path, "append")
    for c in cases:
        request = build_request(registry.get(c.task, c.template), c.snippet)
        store.append(record(request, c.response, RECORDED_AT))
    return len(store)

