"""Regenerate the appendix fixture files (snippets, replay store, gold) from cases.json."""

import argparse
from pathlib import Path

from clinex.appendix import FIXTURE_DIR, build


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dir", type=Path, default=FIXTURE_DIR)
    args = ap.parse_args()
    n = build(args.dir)
    print(f"wrote {n} exchanges to {args.dir / 'store.jsonl'}")


if __name__ == "__main__":
    main()
