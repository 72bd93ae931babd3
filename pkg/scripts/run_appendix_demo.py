"""Replay every recorded appendix exchange and compare resolved outputs to the golden ones."""

import argparse
import tempfile
import time
from pathlib import Path

from clinex import appendix, cli, pipeline
from clinex.core import output_to_json


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dir", type=Path, default=appendix.FIXTURE_DIR)
    ap.add_argument("--show", action="store_true", help="print resolved outputs")
    args = ap.parse_args()

    _, _, cases = appendix.load_cases(args.dir)
    groups = sorted({(c.task, c.template) for c in cases}, key=lambda g: (g[0].value, g[1]))
    start = time.perf_counter()
    preds = {}
    with tempfile.TemporaryDirectory() as tmp:
        for task, template in groups:
            out = Path(tmp) / f"{task.value}-{template}.jsonl"
            cfg = cli.RunConfig(task=task, template=template, backend="replay",
                                snippets=appendix.snippet_file(args.dir, task), out=out,
                                store=appendix.store_file(args.dir), inventory=args.dir / "inventory.json")
            if cli.cmd_run(cfg) != 0:
                raise SystemExit(f"run failed for {task.value}/{template}")
            preds[task, template] = pipeline.load_predictions(out)
    elapsed = time.perf_counter() - start

    ok = 0
    for case in cases:
        got = preds[case.task, case.template][case.snippet.id]
        match = got == case.expected
        ok += match
        print(f"{'ok  ' if match else 'FAIL'} {case.task.value:<18} {case.template:<20} {case.snippet.id}")
        if args.show or not match:
            print(f"     got      {output_to_json(got) if got is not None else None}")
            if not match:
                print(f"     expected {output_to_json(case.expected)}")
    print(f"{ok}/{len(cases)} cases match in {elapsed:.2f}s")
    raise SystemExit(0 if ok == len(cases) else 1)


if __name__ == "__main__":
    main()
