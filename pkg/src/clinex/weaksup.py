"""Pseudolabel filtering and cut-statistic subset selection for distillation.

The cut statistic here is k-nearest-neighbour label agreement in feature
space (cosine distance): the fraction of an example's k neighbours that carry
the same pseudolabel. Training the student model is out of scope; the module
stops at exporting the selected training set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import Snippet

EXPORT_HEADER = "# clinex training set: snippet_id, text, side, candidates, label_index"


class SelectionError(ValueError):
    pass


class MissingFeatures(SelectionError):
    pass


class DimensionMismatch(SelectionError):
    pass


@dataclass(frozen=True)
class Pseudolabel:
    snippet_id: str
    label: int
    overlap_len: int
    features: Optional[tuple] = None
    cut_value: Optional[float] = None
    group: str = ""

    def __post_init__(self):
        if self.overlap_len < 0:
            raise ValueError("overlap_len must be >= 0")
        if self.cut_value is not None and not 0.0 <= self.cut_value <= 1.0:
            raise ValueError("cut_value must lie in [0, 1]")
        if self.features is not None:
            object.__setattr__(self, "features", tuple(float(x) for x in self.features))


@dataclass(frozen=True)
class SelectionConfig:
    min_overlap: int = 5
    keep_fraction: float = 0.75
    k_neighbors: int = 10
    stratify_by_group: bool = True

    def __post_init__(self):
        if not 0 < self.keep_fraction <= 1:
            raise ValueError("keep_fraction must be in (0, 1]")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")


@dataclass
class Selection:
    selected: list
    scored: list
    target: int
    # ids kept only so that every group is represented
    forced: list = field(default_factory=list)

    @property
    def exceeded(self) -> bool:
        return len(self.selected) > self.target


def keep_count(n: int, fraction: float) -> int:
    """``round(fraction * n)`` with halves rounded up."""
    return math.floor(Fraction(str(fraction)) * n + Fraction(1, 2))


def filter_by_overlap(labels: Iterable[Pseudolabel], min_overlap: int = 5) -> list[Pseudolabel]:
    return [p for p in labels if p.overlap_len >= min_overlap]


def _feature_matrix(labels: Sequence[Pseudolabel]) -> np.ndarray:
    missing = [p.snippet_id for p in labels if p.features is None]
    if missing:
        raise MissingFeatures(f"no feature vector for {missing[:5]}{'...' if len(missing) > 5 else ''}")
    dims = {len(p.features) for p in labels}
    if len(dims) > 1:
        raise DimensionMismatch(f"feature dimensions differ: {sorted(dims)}")
    return np.asarray([p.features for p in labels], dtype=float)


TIE_TOLERANCE = 1e-12


def _neighbours(row: np.ndarray, self_index: int) -> list[int]:
    """Other indices by distance; distances within TIE_TOLERANCE count as ties, broken by index."""
    others = sorted((j for j in range(len(row)) if j != self_index), key=lambda j: row[j])
    ranked: list[int] = []
    bucket: list[int] = []
    anchor = 0.0
    for j in others:
        if bucket and row[j] - anchor > TIE_TOLERANCE:
            ranked.extend(sorted(bucket))
            bucket = []
        if not bucket:
            anchor = row[j]
        bucket.append(j)
    ranked.extend(sorted(bucket))
    return ranked


def cut_values(labels: Sequence[Pseudolabel], k: int) -> list[float]:
    """k-NN label agreement for each example (same order as ``labels``).

    Neighbour ties are broken by snippet id, and the computation runs in id
    order, so the result does not depend on input order.
    """
    if not labels:
        return []
    order = sorted(range(len(labels)), key=lambda i: labels[i].snippet_id)
    ordered = [labels[i] for i in order]
    X = _feature_matrix(ordered)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    Xn = np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)
    dist = 1.0 - Xn @ Xn.T
    k = min(k, len(ordered) - 1)
    values = [0.0] * len(labels)
    for pos, p in enumerate(ordered):
        if k == 0:
            value = 1.0
        else:
            others = _neighbours(dist[pos], pos)
            agree = sum(1 for j in others[:k] if ordered[j].label == p.label)
            value = agree / k
        values[order[pos]] = value
    return values


def cut_statistic_select(labels: Sequence[Pseudolabel], config: SelectionConfig = SelectionConfig()) -> Selection:
    """Rank by cut value (ties by id) and keep ``round(keep_fraction * N)``.

    With ``stratify_by_group`` the best example of every group is kept first;
    if there are more groups than slots the selection grows to one per group
    and ``Selection.exceeded`` reports it.
    """
    ids = [p.snippet_id for p in labels]
    if len(set(ids)) != len(ids):
        raise SelectionError("duplicate snippet ids")
    values = cut_values(labels, config.k_neighbors)
    scored = [replace(p, cut_value=v) for p, v in zip(labels, values)]
    ranked = sorted(scored, key=lambda p: (-p.cut_value, p.snippet_id))
    target = keep_count(len(ranked), config.keep_fraction)

    chosen: dict[str, Pseudolabel] = {}
    forced = []
    if config.stratify_by_group:
        top = {p.snippet_id for p in ranked[:target]}
        seen_groups = set()
        for p in ranked:
            if p.group not in seen_groups:
                seen_groups.add(p.group)
                chosen[p.snippet_id] = p
                if p.snippet_id not in top:
                    forced.append(p.snippet_id)
    for p in ranked:
        if len(chosen) >= target:
            break
        chosen.setdefault(p.snippet_id, p)
    selected = [p for p in ranked if p.snippet_id in chosen]
    return Selection(selected, scored, target, forced)


def tfidf_features(snippets: Iterable[Snippet]) -> dict[str, tuple]:
    """Fallback feature vectors: TF-IDF over snippet text."""
    from sklearn.feature_extraction.text import TfidfVectorizer

    snippets = sorted(snippets, key=lambda s: s.id)
    if not snippets:
        return {}
    matrix = TfidfVectorizer(lowercase=True).fit_transform([s.text for s in snippets]).toarray()
    return {s.id: tuple(row.tolist()) for s, row in zip(snippets, matrix)}


def load_features(path) -> dict[str, tuple]:
    """Read ``{snippet_id, vector}`` JSON Lines."""
    out: dict[str, tuple] = {}
    dim = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            sid, vec = str(row["snippet_id"]), tuple(float(x) for x in row["vector"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SelectionError(f"{path}:{lineno}: bad feature line: {exc}") from exc
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise DimensionMismatch(f"{path}:{lineno}: dimension {len(vec)}, expected {dim}")
        out[sid] = vec
    return out


def export_training_set(
    selected: Iterable[Pseudolabel],
    snippets: Mapping[str, Snippet],
    candidates: Mapping[str, Sequence[str]],
    path,
) -> int:
    """Write the selection as JSON Lines in ascending id order; returns the row count."""
    rows = []
    for p in sorted(selected, key=lambda p: p.snippet_id):
        s = snippets[p.snippet_id]
        rows.append(json.dumps({
            "snippet_id": p.snippet_id,
            "text": s.text,
            "side": s.side,
            "candidates": list(candidates[p.snippet_id]),
            "label_index": p.label,
        }, ensure_ascii=False))
    Path(path).write_text("\n".join([EXPORT_HEADER, *rows]) + "\n", encoding="utf-8")
    return len(rows)


def load_training_set(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").split("\n"):
        if line.strip() and not line.startswith("#"):
            rows.append(json.loads(line))
    return rows
