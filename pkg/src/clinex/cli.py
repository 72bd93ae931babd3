"""``clinex`` command line: run, eval, pseudolabel, reverse-sub, cache.

Exit codes: 0 ok, 1 evaluation mismatch, 2 configuration or environment
error, 3 file I/O or integrity error, 4 API failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import corpus, pipeline, weaksup
from .core import TaskKind
from .gateway import (
    ApiError,
    GatewayError,
    LiveBackend,
    LlmTimeout,
    RecordingBackend,
    ReplayBackend,
    StoreError,
    open_store,
    verify_store,
)
from .metrics import MetricError, MismatchedIds
from .prompting import TemplateError, TemplateRegistry, default_registry

log = logging.getLogger("clinex")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_IO, EXIT_API = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    task: TaskKind
    template: str
    backend: str
    snippets: Path
    out: Path
    store: Optional[Path] = None
    inventory: Optional[Path] = None
    gold: Optional[Path] = None
    templates: Optional[Path] = None
    max_tokens: Optional[int] = None
    gap: Optional[int] = 1
    record: bool = False
    workers: int = 4

    def __post_init__(self):
        if self.backend not in ("live", "replay"):
            raise CliError(EXIT_CONFIG, f"unknown backend {self.backend!r}")
        if self.backend == "replay" and self.store is None:
            raise CliError(EXIT_CONFIG, "replay backend needs --store")
        if self.record and (self.backend != "live" or self.store is None):
            raise CliError(EXIT_CONFIG, "--record needs --backend live and --store")
        if self.workers < 1:
            raise CliError(EXIT_CONFIG, "--workers must be >= 1")


def _read(loader, *args):
    try:
        return loader(*args)
    except (OSError, corpus.CorpusError, ValueError) as exc:
        raise CliError(EXIT_IO, str(exc)) from exc


def _registry(path: Optional[Path]) -> TemplateRegistry:
    if path is None:
        return default_registry()
    try:
        return TemplateRegistry.load(path)
    except TemplateError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from exc


def _sense_candidates(snippets, inventory_path, gold_path) -> dict[str, tuple]:
    """Candidate list per snippet from the gold file, else the inventory by acronym."""
    out: dict[str, tuple] = {}
    if gold_path is not None:
        out.update(_read(corpus.load_gold, gold_path, TaskKind.SENSE_DISAMBIGUATION).candidates)
    inventory = _read(corpus.load_inventory, inventory_path) if inventory_path is not None else None
    for s in snippets:
        if s.id in out:
            continue
        if inventory is None or s.side not in inventory:
            raise CliError(EXIT_CONFIG, f"no candidate expansions for snippet {s.id!r} (acronym {s.side!r})")
        out[s.id] = inventory[s.side]
    return out


def _hard_code(exc: Exception) -> int:
    if isinstance(exc, (ApiError, LlmTimeout)):
        return EXIT_API
    return EXIT_IO


def cmd_run(cfg: RunConfig) -> int:
    try:
        template = _registry(cfg.templates).get(cfg.task, cfg.template)
    except KeyError as exc:
        raise CliError(EXIT_CONFIG, str(exc.args[0])) from exc
    snippets = _read(corpus.load_snippets, cfg.snippets)
    candidates = {}
    if cfg.task is TaskKind.SENSE_DISAMBIGUATION and snippets:
        candidates = _sense_candidates(snippets, cfg.inventory, cfg.gold)
    # fill every prompt up front so template problems abort before any API call
    try:
        for s in snippets:
            pipeline.build_request(template, s, cfg.max_tokens)
    except TemplateError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc

    if cfg.backend == "live":
        try:
            backend = LiveBackend.from_env()
        except GatewayError as exc:
            raise CliError(EXIT_CONFIG, str(exc)) from exc
        if cfg.record:
            try:
                backend = RecordingBackend(backend, open_store(cfg.store, "append"))
            except StoreError as exc:
                raise CliError(EXIT_IO, str(exc)) from exc
    else:
        try:
            backend = ReplayBackend(open_store(cfg.store, "read"))
        except StoreError as exc:
            raise CliError(EXIT_IO, str(exc)) from exc

    def one(snippet):
        return pipeline.predict(backend, template, snippet, candidates.get(snippet.id), cfg.gap, cfg.max_tokens)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        predictions = list(pool.map(one, snippets))
    try:
        cfg.out.parent.mkdir(parents=True, exist_ok=True)
        cfg.out.write_text("".join(p.to_line() + "\n" for p in predictions), encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc

    failures = [p for p in predictions if p.hard_error is not None]
    for p in failures:
        log.error("%s: %s", p.id, p.hard_error)
    log.info("wrote %d predictions to %s (%d failed)", len(predictions), cfg.out, len(failures))
    if failures:
        return max(_hard_code(p.hard_error) for p in failures)
    return EXIT_OK


def cmd_eval(task: TaskKind, predictions: Path, gold_path: Path, csv_path: Optional[Path] = None,
             stream=None) -> int:
    stream = stream or sys.stdout
    gold = _read(corpus.load_gold, gold_path, task)
    preds = _read(pipeline.load_predictions, predictions)
    try:
        report = pipeline.evaluate(task, preds, gold)
    except MismatchedIds as exc:
        print(json.dumps({"error": "mismatched ids", "missing_predictions": sorted(exc.missing_pred),
                          "unknown_predictions": sorted(exc.missing_gold)}), file=stream)
        return EXIT_MISMATCH
    except MetricError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    print(json.dumps(report, indent=2), file=stream)
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for key, value in pipeline.headline(report).items():
                writer.writerow([key, value])
    return EXIT_OK


def cmd_pseudolabel(predictions: Path, snippets_path: Path, out: Path, config: weaksup.SelectionConfig,
                    inventory: Optional[Path] = None, gold: Optional[Path] = None,
                    features: Optional[Path] = None, stream=None) -> int:
    stream = stream or sys.stdout
    snippets = {s.id: s for s in _read(corpus.load_snippets, snippets_path)}
    candidates = _sense_candidates(snippets.values(), inventory, gold)
    labels = []
    with open(predictions, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                so = row.get("structured_output")
                if not so or so.get("type") != "choice":
                    continue
                sid, index = row["id"], int(so["index"])
                overlap = int(row["diagnostics"].get("overlap", 0))
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise CliError(EXIT_IO, f"{predictions}:{lineno}: bad prediction line: {exc}") from exc
            if sid not in snippets:
                raise CliError(EXIT_IO, f"prediction {sid!r} has no snippet")
            labels.append(weaksup.Pseudolabel(sid, index, overlap, group=snippets[sid].side))
    kept = weaksup.filter_by_overlap(labels, config.min_overlap)
    if features is not None:
        vectors = _read(weaksup.load_features, features)
    else:
        vectors = weaksup.tfidf_features(snippets[p.snippet_id] for p in kept)
    kept = [weaksup.Pseudolabel(p.snippet_id, p.label, p.overlap_len, vectors.get(p.snippet_id), group=p.group)
            for p in kept]
    try:
        selection = weaksup.cut_statistic_select(kept, config)
    except weaksup.SelectionError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    n = weaksup.export_training_set(selection.selected, snippets, candidates, out)
    print(json.dumps({"pseudolabels": len(labels), "after_overlap_filter": len(kept),
                      "target": selection.target, "selected": n,
                      "stratification_exceptions": selection.forced}), file=stream)
    return EXIT_OK


def cmd_reverse_sub(snippets_path: Path, inventory_path: Path, out: Path, seed: int = 0,
                    sample: Optional[int] = None, stream=None) -> int:
    stream = stream or sys.stdout
    snippets = _read(corpus.load_snippets, snippets_path)
    inventory = _read(corpus.load_inventory, inventory_path)
    derived = corpus.reverse_substitute(snippets, inventory, seed, sample)
    corpus.write_derived(derived, out)
    problems = corpus.round_trip_violations(corpus.load_derived(out), {s.id: s for s in snippets})
    for p in problems:
        log.error(p)
    print(json.dumps({"snippets": len(snippets), "derived": len(derived),
                      "round_trip_failures": len(problems)}), file=stream)
    return EXIT_MISMATCH if problems else EXIT_OK


def cmd_cache(action: str, store: Path, stream=None) -> int:
    stream = stream or sys.stdout
    if action == "verify":
        problems = verify_store(store)
        for p in problems:
            print(p, file=stream)
        if problems:
            return EXIT_IO
        print(f"{store}: ok", file=stream)
        return EXIT_OK
    try:
        exchanges = open_store(store, "read").exchanges()
    except StoreError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    for e in exchanges:
        head = e.request.prompt.replace("\n", " ")[:60]
        print(f"{e.request_digest[:12]}  {e.request.mode.value:<10} {e.request.engine:<22} "
              f"{e.recorded_at}  {head}", file=stream)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clinex", description="Structured clinical extraction from LLM outputs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="prompt, generate and resolve a snippet file")
    run.add_argument("--task", required=True)
    run.add_argument("--template", help="template name (default depends on task)")
    run.add_argument("--backend", choices=("live", "replay"), default="replay")
    run.add_argument("--store", type=Path)
    run.add_argument("--snippets", type=Path, required=True)
    run.add_argument("--inventory", type=Path, help="sense inventory (sense task)")
    run.add_argument("--gold", type=Path, help="sense gold file supplying candidate lists")
    run.add_argument("--templates", type=Path, help="template registry JSON (default: built-in)")
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--max-tokens", type=int)
    run.add_argument("--gap", type=int, default=1, help="evidence gap fill; negative fills any gap")
    run.add_argument("--record", action="store_true", help="append live exchanges to --store")
    run.add_argument("--workers", type=int, default=4)

    ev = sub.add_parser("eval", help="score predictions against gold")
    ev.add_argument("--task", required=True)
    ev.add_argument("--predictions", type=Path, required=True)
    ev.add_argument("--gold", type=Path, required=True)
    ev.add_argument("--csv", type=Path)

    pl = sub.add_parser("pseudolabel", help="filter and select sense pseudolabels")
    pl.add_argument("--predictions", type=Path, required=True)
    pl.add_argument("--snippets", type=Path, required=True)
    pl.add_argument("--inventory", type=Path)
    pl.add_argument("--gold", type=Path)
    pl.add_argument("--features", type=Path, help="JSON Lines {snippet_id, vector}; default TF-IDF")
    pl.add_argument("--out", type=Path, required=True)
    defaults = weaksup.SelectionConfig()
    pl.add_argument("--min-overlap", type=int, default=defaults.min_overlap)
    pl.add_argument("--keep-fraction", type=float, default=defaults.keep_fraction)
    pl.add_argument("--k", type=int, default=defaults.k_neighbors)
    pl.add_argument("--no-stratify", action="store_true")

    rs = sub.add_parser("reverse-sub", help="derive acronym examples by reverse substitution")
    rs.add_argument("--snippets", type=Path, required=True)
    rs.add_argument("--inventory", type=Path, required=True)
    rs.add_argument("--out", type=Path, required=True)
    rs.add_argument("--seed", type=int, default=0)
    rs.add_argument("--sample", type=int)

    ca = sub.add_parser("cache", help="inspect a replay store")
    ca.add_argument("action", choices=("list", "verify"))
    ca.add_argument("store", type=Path)
    return p


def _task(value: str) -> TaskKind:
    try:
        return TaskKind.parse(value)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            task = _task(args.task)
            cfg = RunConfig(
                task=task, template=args.template or pipeline.DEFAULT_TEMPLATE[task], backend=args.backend,
                snippets=args.snippets, out=args.out, store=args.store, inventory=args.inventory,
                gold=args.gold, templates=args.templates, max_tokens=args.max_tokens,
                gap=None if args.gap < 0 else args.gap, record=args.record, workers=args.workers,
            )
            return cmd_run(cfg)
        if args.command == "eval":
            return cmd_eval(_task(args.task), args.predictions, args.gold, args.csv)
        if args.command == "pseudolabel":
            try:
                config = weaksup.SelectionConfig(args.min_overlap, args.keep_fraction, args.k, not args.no_stratify)
            except ValueError as exc:
                raise CliError(EXIT_CONFIG, str(exc)) from exc
            return cmd_pseudolabel(args.predictions, args.snippets, args.out, config,
                                   args.inventory, args.gold, args.features)
        if args.command == "reverse-sub":
            return cmd_reverse_sub(args.snippets, args.inventory, args.out, args.seed, args.sample)
        return cmd_cache(args.action, args.store)
    except CliError as exc:
        print(f"clinex: error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"clinex: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
