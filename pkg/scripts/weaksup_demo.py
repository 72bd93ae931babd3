"""Cut-statistic selection on a small planted-noise instance and on random clusters."""

import argparse
import random

from clinex import weaksup
from clinex.weaksup import Pseudolabel, SelectionConfig

# two clusters; a3 sits in the first cluster with the second cluster's label
EIGHT_POINTS = [
    ("a0", 0, (10, 1)), ("a1", 0, (10, 2)), ("a2", 0, (9, 1)), ("a3", 1, (10, 0)),
    ("b0", 1, (1, 10)), ("b1", 1, (2, 10)), ("b2", 1, (1, 9)), ("b3", 1, (0, 10)),
]


def clusters(n, noise, rng):
    """Two Gaussian clusters whose labels are flipped with probability ``noise``."""
    labels, flipped = [], set()
    for i in range(n):
        true = i % 2
        centre = (5.0, 1.0) if true == 0 else (1.0, 5.0)
        vec = tuple(c + rng.gauss(0, 0.8) for c in centre)
        label = true
        if rng.random() < noise:
            label = 1 - true
            flipped.add(f"p{i:03d}")
        labels.append(Pseudolabel(f"p{i:03d}", label, 9, vec))
    return labels, flipped


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--noise", type=float, default=0.2)
    ap.add_argument("--keep-fraction", type=float, default=0.75)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sel = weaksup.cut_statistic_select([Pseudolabel(i, lab, 9, vec) for i, lab, vec in EIGHT_POINTS],
                                       SelectionConfig(k_neighbors=3))
    print("eight-point instance, k=3")
    for p in sel.scored:
        print(f"  {p.snippet_id} label={p.label} cut={p.cut_value:.3f} {'kept' if p in sel.selected else 'dropped'}")

    labels, flipped = clusters(args.n, args.noise, random.Random(args.seed))
    cfg = SelectionConfig(keep_fraction=args.keep_fraction, k_neighbors=args.k, stratify_by_group=False)
    sel = weaksup.cut_statistic_select(labels, cfg)
    kept = {p.snippet_id for p in sel.selected}
    before = len(flipped) / len(labels)
    after = len(flipped & kept) / len(kept) if kept else 0.0
    print(f"clusters: n={args.n} noise={args.noise} q={args.keep_fraction} k={args.k}")
    print(f"  label noise before {before:.3f}, after selection {after:.3f} ({len(kept)} kept)")


if __name__ == "__main__":
    main()
