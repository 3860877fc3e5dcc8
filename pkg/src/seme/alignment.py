"""Aligning token sequences from different tokenizers, mapping vocabularies,
and fusing per-position output distributions.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .kernels import align_table, levenshtein

logger = logging.getLogger(__name__)

MAPPING_MODES = ("exact", "fuzzy", "statistical")
FUSION_STRATEGIES = ("min_cross_entropy", "average")
UNMAPPED_POLICIES = ("redistribute", "unknown")


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    surface_forms: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if any(i < 0 for i in self.ids):
            raise ValueError("token ids must be non-negative")
        if self.surface_forms is not None:
            sf = tuple(str(s) for s in self.surface_forms)
            if len(sf) != len(self.ids):
                raise ValueError("surface_forms must have the same length as ids")
            object.__setattr__(self, "surface_forms", sf)

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_surfaces(cls, surfaces: Sequence[str], vocab: Mapping[str, int] | None = None):
        """Build from strings; ids come from ``vocab`` or from first appearance."""
        if vocab is None:
            seen: dict[str, int] = {}
            ids = [seen.setdefault(s, len(seen)) for s in surfaces]
        else:
            ids = [vocab[s] for s in surfaces]
        return cls(tuple(ids), tuple(surfaces))


@dataclass(frozen=True)
class Link:
    src_start: int
    src_end: int
    pivot_start: int
    pivot_end: int

    @property
    def kind(self) -> str:
        ns, np_ = self.src_end - self.src_start, self.pivot_end - self.pivot_start
        if ns == 1 and np_ == 1:
            return "one-to-one"
        return "one-to-many" if ns == 1 else "many-to-one"

    def as_list(self) -> list[int]:
        return [self.src_start, self.src_end, self.pivot_start, self.pivot_end]


@dataclass(frozen=True)
class AlignmentMap:
    links: tuple[Link, ...]
    cost: float

    def to_dict(self) -> dict:
        return {
            "cost": self.cost,
            "links": [{"src": [l.src_start, l.src_end], "pivot": [l.pivot_start, l.pivot_end], "kind": l.kind}
                      for l in self.links],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AlignmentMap":
        links = tuple(Link(l["src"][0], l["src"][1], l["pivot"][0], l["pivot"][1]) for l in d["links"])
        return cls(links, float(d["cost"]))


@dataclass(frozen=True)
class EditCosts:
    """Costs for one link: a non-matching span pays ``substitution``; a
    one-to-k link pays ``split * (k - 1)`` and a k-to-one link ``merge * (k - 1)``
    on top. ``max_span <= 0`` means unbounded spans.
    """

    substitution: float = 1.0
    split: float = 1.0
    merge: float = 1.0
    max_span: int = 0


def _codes(seq: TokenSequence, use_surfaces: bool):
    if use_surfaces:
        codes, off = [], [0]
        for s in seq.surface_forms:
            codes.extend(ord(ch) for ch in s)
            off.append(len(codes))
        return np.array(codes, dtype=np.int64), np.array(off, dtype=np.int64)
    return np.array(seq.ids, dtype=np.int64), np.arange(len(seq.ids) + 1, dtype=np.int64)


def spans_match(src: TokenSequence, pivot: TokenSequence, link: Link) -> bool:
    """Concatenated surfaces equal, or equal ids for a one-to-one link without surfaces."""
    if src.surface_forms is not None and pivot.surface_forms is not None:
        a = "".join(src.surface_forms[link.src_start:link.src_end])
        b = "".join(pivot.surface_forms[link.pivot_start:link.pivot_end])
        return a == b
    return link.kind == "one-to-one" and src.ids[link.src_start] == pivot.ids[link.pivot_start]


def link_cost(src: TokenSequence, pivot: TokenSequence, link: Link, costs: EditCosts) -> float:
    ns, np_ = link.src_end - link.src_start, link.pivot_end - link.pivot_start
    c = 0.0 if spans_match(src, pivot, link) else costs.substitution
    if np_ > 1:
        c += costs.split * (np_ - 1)
    if ns > 1:
        c += costs.merge * (ns - 1)
    return c


def align_sequences(src: TokenSequence, pivot: TokenSequence, costs: EditCosts | None = None) -> AlignmentMap:
    """Minimum-cost segmentation of both sequences into one-to-one,
    one-to-many and many-to-one links.

    Among optimal alignments the earliest link is chosen first, preferring
    one-to-one, then splits, then merges, shorter spans first.
    """
    costs = costs or EditCosts()
    if not len(src) or not len(pivot):
        raise ValueError("cannot align an empty sequence")
    use_surfaces = src.surface_forms is not None and pivot.surface_forms is not None
    sc, so = _codes(src, use_surfaces)
    pc, po = _codes(pivot, use_surfaces)
    cost, choice = align_table(sc, so, pc, po, float(costs.substitution), float(costs.split),
                               float(costs.merge), int(costs.max_span))
    if not math.isfinite(cost[0, 0]):
        raise ValueError("no legal alignment under the given max_span")
    links = []
    i = j = 0
    n, m = len(src), len(pivot)
    while i < n or j < m:
        c = int(choice[i, j])
        if c > 0:
            links.append(Link(i, i + 1, j, j + c))
            i, j = i + 1, j + c
        else:
            links.append(Link(i, i - c, j, j + 1))
            i, j = i - c, j + 1
    return AlignmentMap(tuple(links), float(cost[0, 0]))


def check_alignment(amap: AlignmentMap, n_src: int, n_pivot: int) -> None:
    """Raise unless the links tile both sequences in order with no many-to-many link."""
    i = j = 0
    for l in amap.links:
        if l.src_start != i or l.pivot_start != j:
            raise ValueError(f"link {l} is not contiguous")
        ns, np_ = l.src_end - l.src_start, l.pivot_end - l.pivot_start
        if ns < 1 or np_ < 1 or (ns > 1 and np_ > 1):
            raise ValueError(f"illegal link {l}")
        i, j = l.src_end, l.pivot_end
    if (i, j) != (n_src, n_pivot):
        raise ValueError("links do not cover both sequences")


# --------------------------------------------------------------------------
# Vocabulary mapping


@dataclass(frozen=True)
class AlignedPair:
    src: TokenSequence
    pivot: TokenSequence
    alignment: AlignmentMap


@dataclass(frozen=True, eq=False)
class VocabMappingTable:
    mode: str
    entries: Mapping[int, tuple[tuple[int, float], ...]]
    pivot_vocab_size: int
    counts: Mapping[int, Mapping[int, float]] = field(default_factory=dict)
    src_vocab_size: int | None = None

    def __post_init__(self):
        if self.mode not in MAPPING_MODES:
            raise ValueError(f"unknown mapping mode {self.mode!r}")
        entries = {}
        for i, targets in self.entries.items():
            targets = tuple((int(j), float(w)) for j, w in targets)
            if not targets:
                continue
            if any(w < 0 for _, w in targets) or abs(sum(w for _, w in targets) - 1.0) > 1e-9:
                raise ValueError(f"weights for source token {i} must be nonnegative and sum to 1")
            if any(not 0 <= j < self.pivot_vocab_size for j, _ in targets):
                raise ValueError(f"source token {i} maps outside the pivot vocabulary")
            entries[int(i)] = targets
        object.__setattr__(self, "entries", dict(sorted(entries.items())))
        src_idx = [i for i, t in self.entries.items() for _ in t]
        piv_idx = [j for t in self.entries.values() for j, _ in t]
        weights = [w for t in self.entries.values() for _, w in t]
        object.__setattr__(self, "_src_idx", np.array(src_idx, dtype=np.int64))
        object.__setattr__(self, "_piv_idx", np.array(piv_idx, dtype=np.int64))
        object.__setattr__(self, "_weights", np.array(weights, dtype=np.float64))

    def is_mapped(self, token: int) -> bool:
        return token in self.entries

    def matrix(self, src_vocab_size: int) -> np.ndarray:
        """Dense row-stochastic matrix (unmapped rows are zero)."""
        M = np.zeros((src_vocab_size, self.pivot_vocab_size))
        np.add.at(M, (self._src_idx, self._piv_idx), self._weights)
        return M

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "src_vocab_size": self.src_vocab_size,
            "pivot_vocab_size": self.pivot_vocab_size,
            "entries": {str(i): [[j, w] for j, w in t] for i, t in self.entries.items()},
            "counts": {str(i): {str(j): c for j, c in sorted(row.items())} for i, row in sorted(self.counts.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "VocabMappingTable":
        return cls(
            mode=d["mode"],
            entries={int(i): tuple((int(j), float(w)) for j, w in t) for i, t in d["entries"].items()},
            pivot_vocab_size=int(d["pivot_vocab_size"]),
            counts={int(i): {int(j): float(c) for j, c in row.items()} for i, row in d.get("counts", {}).items()},
            src_vocab_size=d.get("src_vocab_size"),
        )


def _exact_entries(src_vocab: Sequence[str], pivot_vocab: Sequence[str]):
    index: dict[str, int] = {}
    for j, s in enumerate(pivot_vocab):
        index.setdefault(s, j)
    return {i: ((index[s], 1.0),) for i, s in enumerate(src_vocab) if s in index}


def _fuzzy_entries(src_vocab: Sequence[str], pivot_vocab: Sequence[str], max_dist: int):
    entries = _exact_entries(src_vocab, pivot_vocab)
    by_len: dict[int, list[int]] = defaultdict(list)
    for j, s in enumerate(pivot_vocab):
        by_len[len(s)].append(j)
    for i, s in enumerate(src_vocab):
        if i in entries:
            continue
        best, best_j = max_dist + 1, None
        cands = sorted(j for L in range(len(s) - max_dist, len(s) + max_dist + 1) for j in by_len.get(L, ()))
        for j in cands:
            d = levenshtein(s, pivot_vocab[j], best - 1 if best <= max_dist else max_dist)
            if d < best:
                best, best_j = d, j
                if d == 1:
                    break
        if best_j is not None:
            entries[i] = ((best_j, 1.0),)
    return entries


def count_cooccurrences(corpus: Iterable[AlignedPair]) -> dict[int, dict[int, float]]:
    """Source-to-pivot co-occurrence counts from aligned spans.

    A matching link counts 1 per source token: a split credits the first pivot
    token of the span, a merge credits its single pivot token. A mismatched
    link spreads each source token's unit count evenly over the pivot span.
    """
    counts: dict[int, dict[int, float]] = defaultdict(lambda: defaultdict(float))
    for pair in corpus:
        check_alignment(pair.alignment, len(pair.src), len(pair.pivot))
        for l in pair.alignment.links:
            src_ids = pair.src.ids[l.src_start:l.src_end]
            piv_ids = pair.pivot.ids[l.pivot_start:l.pivot_end]
            if spans_match(pair.src, pair.pivot, l):
                for t in src_ids:
                    counts[t][piv_ids[0]] += 1.0
            else:
                share = 1.0 / len(piv_ids)
                for t in src_ids:
                    for u in piv_ids:
                        counts[t][u] += share
    return {i: dict(row) for i, row in counts.items()}


def build_vocab_mapping(
    mode: str,
    src_vocab: Sequence[str] | None = None,
    pivot_vocab: Sequence[str] | None = None,
    corpus: Sequence[AlignedPair] | None = None,
    fuzzy_max_dist: int = 1,
    pivot_vocab_size: int | None = None,
) -> VocabMappingTable:
    if mode not in MAPPING_MODES:
        raise ValueError(f"unknown mapping mode {mode!r}")
    if mode in ("exact", "fuzzy"):
        if src_vocab is None or pivot_vocab is None:
            raise ValueError(f"{mode} mapping needs source and pivot surface vocabularies")
        if mode == "exact":
            entries = _exact_entries(src_vocab, pivot_vocab)
        else:
            if fuzzy_max_dist < 0:
                raise ValueError("fuzzy_max_dist must be >= 0")
            entries = _fuzzy_entries(src_vocab, pivot_vocab, fuzzy_max_dist)
        table = VocabMappingTable(mode, entries, len(pivot_vocab), {}, len(src_vocab))
    else:
        if not corpus:
            raise ValueError("statistical mapping needs a non-empty aligned corpus")
        counts = count_cooccurrences(corpus)
        entries = {}
        for i, row in counts.items():
            total = math.fsum(row.values())
            entries[i] = tuple((j, c / total) for j, c in sorted(row.items()))
        if pivot_vocab_size is None:
            pivot_vocab_size = len(pivot_vocab) if pivot_vocab is not None else 1 + max(
                max(p.pivot.ids) for p in corpus
            )
        src_size = len(src_vocab) if src_vocab is not None else None
        table = VocabMappingTable(mode, entries, pivot_vocab_size, counts, src_size)
    if table.src_vocab_size:
        logger.info("%s mapping covers %d/%d source tokens", mode, len(table.entries), table.src_vocab_size)
    return table


def map_distribution(
    src_row: np.ndarray,
    table: VocabMappingTable,
    unmapped: str = "redistribute",
    unknown_id: int | None = None,
) -> np.ndarray:
    """Push a source-vocabulary distribution through the mapping table.

    Mass on unmapped source tokens is either spread proportionally over the
    mapped result or routed to ``unknown_id``.
    """
    if unmapped not in UNMAPPED_POLICIES:
        raise ValueError(f"unknown unmapped-mass policy {unmapped!r}")
    row = np.asarray(src_row, dtype=np.float64)
    if row.ndim != 1 or (row < 0).any() or abs(row.sum() - 1.0) > 1e-6:
        raise ValueError("source row must be a probability vector")
    if table._src_idx.size and table._src_idx.max() >= row.size:
        raise ValueError("mapping table refers to tokens beyond the source row")
    out = np.bincount(
        table._piv_idx, weights=row[table._src_idx] * table._weights, minlength=table.pivot_vocab_size
    ) if table._src_idx.size else np.zeros(table.pivot_vocab_size)
    mapped = np.zeros(row.size, dtype=bool)
    mapped[table._src_idx] = True
    lost = float(row[~mapped].sum())
    if unmapped == "unknown":
        if unknown_id is None or not 0 <= unknown_id < table.pivot_vocab_size:
            raise ValueError("unknown-token routing needs a valid unknown_id")
        out[unknown_id] += lost
    total = out.sum()
    if not total > 0:
        raise ValueError("no probability mass survives the mapping")
    return out / total


@dataclass(frozen=True, eq=False)
class DistributionMatrix:
    rows: np.ndarray
    sources: tuple[str, ...] | None = None

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.float64)
        if r.ndim != 2:
            raise ValueError("distribution matrix must be 2-D")
        if (r < 0).any() or np.abs(r.sum(axis=1) - 1.0).max(initial=0.0) > 1e-6:
            raise ValueError("every row must be a probability distribution")
        object.__setattr__(self, "rows", r)

    def __len__(self) -> int:
        return self.rows.shape[0]


def cross_entropy(rows: np.ndarray, reference: Sequence[int]) -> np.ndarray:
    """Per-position -log p[ref]."""
    ref = np.asarray(reference, dtype=np.int64)
    with np.errstate(divide="ignore"):
        return -np.log(rows[np.arange(len(ref)), ref])


def fuse_distributions(
    a: DistributionMatrix,
    b: DistributionMatrix,
    reference: TokenSequence | Sequence[int],
    strategy: str = "min_cross_entropy",
) -> DistributionMatrix:
    """Fuse two aligned distribution matrices over the pivot vocabulary.

    ``min_cross_entropy`` keeps, per position, the row with the lower
    cross-entropy against the reference token (``a`` on ties); ``average``
    takes the renormalised mean.
    """
    if strategy not in FUSION_STRATEGIES:
        raise ValueError(f"unknown fusion strategy {strategy!r}")
    ref = reference.ids if isinstance(reference, TokenSequence) else tuple(int(t) for t in reference)
    if a.rows.shape != b.rows.shape:
        raise ValueError(f"shape mismatch: {a.rows.shape} vs {b.rows.shape}")
    if len(ref) != len(a):
        raise ValueError("reference length differs from the number of positions")
    if any(not 0 <= t < a.rows.shape[1] for t in ref):
        raise ValueError("reference token outside the vocabulary")
    if strategy == "average":
        avg = (a.rows + b.rows) / 2
        return DistributionMatrix(avg / avg.sum(axis=1, keepdims=True))
    pick_b = cross_entropy(b.rows, ref) < cross_entropy(a.rows, ref)
    fused = np.where(pick_b[:, None], b.rows, a.rows)
    return DistributionMatrix(fused, tuple("b" if p else "a" for p in pick_b))
