"""Derive acronym examples from a synthetic note corpus and check the round trip."""

import argparse
import random
from collections import Counter

from clinex import corpus
from clinex.core import Snippet

INVENTORY = {
    "PT": ["physical therapy", "prothrombin time"],
    "RA": ["rheumatoid arthritis", "right atrium"],
    "MS": ["multiple sclerosis", "mitral stenosis"],
    "CTA": ["clear to auscultation", "computed tomographic angiography"],
    "PA": ["pulmonary artery", "physician assistant"],
    "ER": ["emergency room", "extended release"],
}
FILLER = ["patient", "seen", "today", "with", "noted", "plan", "follow", "up", "clinic", "stable", "denies",
          "fever", "café", "reviewed", "labs"]


def synth(n, rng):
    expansions = [e for es in INVENTORY.values() for e in es]
    snippets = []
    for i in range(n):
        words = [rng.choice(expansions) if rng.random() < 0.2 else rng.choice(FILLER)
                 for _ in range(rng.randint(4, 14))]
        snippets.append(Snippet(f"n{i:03d}", " ".join(words) + "."))
    return snippets


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sample", type=int)
    args = ap.parse_args()

    snippets = synth(args.n, random.Random(args.seed))
    derived = corpus.reverse_substitute(snippets, corpus.SenseInventory(INVENTORY), seed=args.seed,
                                        sample=args.sample)
    bad = corpus.round_trip_violations(derived, {s.id: s for s in snippets})
    print(f"{len(snippets)} snippets -> {len(derived)} derived examples, {len(bad)} round-trip failures")
    for (acr, label), n in sorted(Counter((d.acronym, d.label.lower()) for d in derived).items()):
        print(f"  {acr:<4} {label:<34} {n}")
    for d in derived[:3]:
        print(f"  {d.snippet.id}: {d.snippet.text}")
    raise SystemExit(1 if bad else 0)


if __name__ == "__main__":
    main()
