"""Shared value types: token sequences, masks, hierarchies, attribution tables.

Attribution mass is kept as exact integer counts alongside the divisor
(`sample_count`), never as floats. Merging runs is then plain integer
addition, which is associative and commutative bit for bit; weights are
materialized as `Fraction`s only when read.

All types here are immutable values. Samplers accumulate in private dicts and
freeze them into `AttributionTable`s at the end, so tables can cross thread
boundaries and merge in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

from .textnorm import ABSTAIN

# Feature ids are token positions (int) for flat runs, node ids (str) for
# hierarchy levels.
FeatureId = int | str

# A feature is an id plus the positions it unmasks as a block.
Feature = tuple[FeatureId, tuple[int, ...]]

KINDS = ("document", "sentence", "word")


# ---------------------------------------------------------------------------
# sequences and masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenSeq:
    """An encoded input: token ids in [1, vocab_size] with one reserved pad id."""

    tokens: tuple[int, ...]
    vocab_size: int
    pad_id: int = 1

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if not 1 <= self.pad_id <= self.vocab_size:
            raise ValueError("pad_id outside [1, vocab_size]")
        for t in self.tokens:
            if not 1 <= t <= self.vocab_size:
                raise ValueError(f"token id {t} outside [1, {self.vocab_size}]")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Mask:
    """A visibility bitset over a sequence of `length` positions.

    Stored sparsely as the set of visible positions; `bits` materializes the
    dense 0/1 view. Round-trips with position sets losslessly.
    """

    length: int
    positions: frozenset[int]

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("length must be non-negative")
        for p in self.positions:
            if not 0 <= p < self.length:
                raise ValueError(f"position {p} outside [0, {self.length})")

    @classmethod
    def from_positions(cls, length: int, positions: Iterable[int]) -> "Mask":
        return cls(length, frozenset(positions))

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "Mask":
        return cls(len(bits), frozenset(i for i, b in enumerate(bits) if b))

    @classmethod
    def full(cls, length: int) -> "Mask":
        return cls(length, frozenset(range(length)))

    @classmethod
    def empty(cls, length: int) -> "Mask":
        return cls(length, frozenset())

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple(1 if i in self.positions else 0 for i in range(self.length))

    def __len__(self) -> int:
        return self.length

    def __contains__(self, position: int) -> bool:
        return position in self.positions

    def union(self, other: "Mask") -> "Mask":
        if other.length != self.length:
            raise ValueError("mask length mismatch")
        return Mask(self.length, self.positions | other.positions)

    def invert(self) -> "Mask":
        return Mask(self.length, frozenset(range(self.length)) - self.positions)


def apply_mask(x: TokenSeq, s: Mask, mode: str = "pad") -> TokenSeq:
    """Materialize a masked view of `x`.

    pad keeps length and overwrites hidden positions with the pad id; drop
    deletes hidden positions outright. Backends that only need the visible
    set can skip materialization entirely; this is the reference semantics.
    """
    if len(s) != len(x):
        raise ValueError(f"mask length {len(s)} != sequence length {len(x)}")
    if mode == "pad":
        toks = tuple(
            t if i in s.positions else x.pad_id for i, t in enumerate(x.tokens)
        )
    elif mode == "drop":
        toks = tuple(t for i, t in enumerate(x.tokens) if i in s.positions)
    else:
        raise ValueError(f"unknown mask mode {mode!r}")
    return TokenSeq(toks, x.vocab_size, x.pad_id)


@dataclass(frozen=True)
class Permutation:
    """An evaluation order over n features; contains each index exactly once."""

    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError("order is not a permutation of 0..n-1")

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    def __len__(self) -> int:
        return len(self.order)

    def __iter__(self) -> Iterator[int]:
        return iter(self.order)


# ---------------------------------------------------------------------------
# hierarchies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HierarchyNode:
    """One node of a hierarchy: a contiguous block of token positions.

    Terminal nodes have no children; internal nodes own exactly the union of
    their children's positions, in order.
    """

    node_id: str
    kind: str
    positions: tuple[int, ...]
    children: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS and self.kind != "root":
            raise ValueError(f"unknown node kind {self.kind!r}")
        if not self.positions:
            raise ValueError(f"node {self.node_id} owns no positions")
        lo, hi = self.positions[0], self.positions[-1]
        if self.positions != tuple(range(lo, hi + 1)):
            raise ValueError(f"node {self.node_id} span is not contiguous")


class HierarchySpec:
    """A rooted tree over token positions with levels document/sentence/word.

    Level k holds the nodes at depth k below the root. Leaves of the tree
    partition [0, num_tokens) exactly; every internal node covers precisely
    its children. Construction validates the whole shape once, after which
    the tree is read-only.
    """

    def __init__(self, nodes: Iterable[HierarchyNode], root_children: Sequence[str], num_tokens: int):
        self._nodes: dict[str, HierarchyNode] = {}
        for node in nodes:
            if node.node_id in self._nodes:
                raise ValueError(f"duplicate node id {node.node_id!r}")
            self._nodes[node.node_id] = node
        self.root_children = tuple(root_children)
        self.num_tokens = num_tokens
        self._depths: dict[str, int] = {}
        self._validate()

    def _validate(self):
        seen: set[int] = set()
        reached: set[str] = set()

        def visit(node_id: str, depth: int):
            node = self.node(node_id)
            if node_id in reached:
                raise ValueError(f"node {node_id!r} reached twice")
            reached.add(node_id)
            self._depths[node_id] = depth
            if node.children:
                got: list[int] = []
                for child_id in node.children:
                    visit(child_id, depth + 1)
                    got.extend(self.node(child_id).positions)
                if tuple(got) != node.positions:
                    raise ValueError(f"node {node_id!r} does not cover its children")
            else:
                for p in node.positions:
                    if p in seen:
                        raise ValueError(f"position {p} owned by two leaves")
                    seen.add(p)

        for child_id in self.root_children:
            visit(child_id, 1)
        if reached != set(self._nodes):
            orphans = sorted(set(self._nodes) - reached)
            raise ValueError(f"unreachable nodes: {orphans}")
        if seen != set(range(self.num_tokens)):
            raise ValueError("leaf positions do not partition the sequence")

    def node(self, node_id: str) -> HierarchyNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise KeyError(f"unknown node id {node_id!r}") from None

    def children_of(self, node_id: str) -> tuple[str, ...]:
        return self.node(node_id).children

    def depth_of(self, node_id: str) -> int:
        self.node(node_id)
        return self._depths[node_id]

    def level_nodes(self, level: int) -> tuple[str, ...]:
        """Node ids at depth `level` (1 = children of the root), in tree order."""
        if level < 1:
            raise ValueError("levels start at 1")
        frontier = list(self.root_children)
        for _ in range(level - 1):
            frontier = [c for nid in frontier for c in self.node(nid).children]
        return tuple(frontier)

    @property
    def num_levels(self) -> int:
        return max(self._depths.values(), default=0)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def node_ids(self) -> tuple[str, ...]:
        return tuple(self._nodes)


def mask_of_node(h: HierarchySpec, active_nodes: Iterable[str]) -> Mask:
    """The visibility mask that unhides exactly the given nodes' positions."""
    visible: set[int] = set()
    for node_id in active_nodes:
        visible.update(h.node(node_id).positions)
    return Mask(h.num_tokens, frozenset(visible))


# ---------------------------------------------------------------------------
# attribution mass
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnswerDistribution:
    """Sparse non-negative weights over answer texts.

    `normalized` marks distributions whose weights are meant to sum to one;
    the flag is checked, not inferred.
    """

    weights: Mapping[str, Fraction]
    normalized: bool = False

    def __post_init__(self):
        for answer, w in self.weights.items():
            if w < 0:
                raise ValueError(f"negative weight for {answer!r}")
        if self.normalized:
            total = sum(self.weights.values(), Fraction(0))
            if abs(total - 1) > Fraction(1, 10**9):
                raise ValueError(f"normalized distribution sums to {total}")

    def __getitem__(self, answer: str) -> Fraction:
        return self.weights.get(answer, Fraction(0))

    def __len__(self) -> int:
        return len(self.weights)

    def items(self):
        return self.weights.items()

    def total(self, include_abstain: bool = True) -> Fraction:
        return sum(
            (w for a, w in self.weights.items() if include_abstain or a != ABSTAIN),
            Fraction(0),
        )


@dataclass(frozen=True, eq=True)
class AttributionTable:
    """Per-feature answer masses as raw counts over `sample_count` paths.

    counts[fid][answer] is the number of sampled paths in which unmasking
    `fid` switched the running answer to `answer`. Reads divide by
    `sample_count`; merges add counts, so combining partial runs is exact.
    """

    feature_ids: tuple[FeatureId, ...]
    counts: Mapping[FeatureId, Mapping[str, int]]
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 0:
            raise ValueError("sample_count must be non-negative")
        known = set(self.feature_ids)
        if len(known) != len(self.feature_ids):
            raise ValueError("duplicate feature ids")
        for fid, row in self.counts.items():
            if fid not in known:
                raise ValueError(f"counts for unknown feature {fid!r}")
            for answer, c in row.items():
                if c < 0:
                    raise ValueError(f"negative count for {fid!r}/{answer!r}")

    @classmethod
    def from_counts(
        cls,
        feature_ids: Sequence[FeatureId],
        counts: Mapping[FeatureId, Mapping[str, int]],
        sample_count: int,
    ) -> "AttributionTable":
        frozen = {fid: dict(row) for fid, row in counts.items() if row}
        return cls(tuple(feature_ids), frozen, sample_count)

    @classmethod
    def empty(cls, feature_ids: Sequence[FeatureId]) -> "AttributionTable":
        return cls(tuple(feature_ids), {}, 0)

    def counts_of(self, fid: FeatureId) -> Mapping[str, int]:
        if fid not in set(self.feature_ids):
            raise KeyError(f"unknown feature {fid!r}")
        return self.counts.get(fid, {})

    def mass(self, fid: FeatureId, answer: str) -> Fraction:
        """Normalized mass of one (feature, answer) cell."""
        if self.sample_count == 0:
            return Fraction(0)
        return Fraction(self.counts_of(fid).get(answer, 0), self.sample_count)

    def total_mass(self, fid: FeatureId, include_abstain: bool = True) -> Fraction:
        if self.sample_count == 0:
            return Fraction(0)
        row = self.counts_of(fid)
        tot = sum(c for a, c in row.items() if include_abstain or a != ABSTAIN)
        return Fraction(tot, self.sample_count)

    def distribution(self, fid: FeatureId) -> AnswerDistribution:
        row = self.counts_of(fid)
        if self.sample_count == 0:
            return AnswerDistribution({})
        return AnswerDistribution(
            {a: Fraction(c, self.sample_count) for a, c in row.items()}
        )

    def answers(self) -> set[str]:
        out: set[str] = set()
        for row in self.counts.values():
            out.update(row)
        return out


def merge_attributions(a: AttributionTable, b: AttributionTable) -> AttributionTable:
    """Pointwise-sum two tables over the same feature universe.

    Associative and commutative exactly, because only integers move.
    """
    if a.feature_ids != b.feature_ids:
        raise ValueError("feature universes differ; refusing to merge")
    merged: dict[FeatureId, dict[str, int]] = {
        fid: dict(row) for fid, row in a.counts.items()
    }
    for fid, row in b.counts.items():
        slot = merged.setdefault(fid, {})
        for answer, c in row.items():
            slot[answer] = slot.get(answer, 0) + c
    return AttributionTable.from_counts(
        a.feature_ids, merged, a.sample_count + b.sample_count
    )


# ---------------------------------------------------------------------------
# feature helpers
# ---------------------------------------------------------------------------


def token_features(x: TokenSeq) -> list[Feature]:
    """One singleton feature per token position."""
    return [(i, (i,)) for i in range(len(x))]


def node_features(h: HierarchySpec, level: int = 1) -> list[Feature]:
    """One feature per hierarchy node at the given level."""
    return [(nid, h.node(nid).positions) for nid in h.level_nodes(level)]


def check_features(features: Sequence[Feature], length: int) -> None:
    """Features must cover disjoint in-range positions. Positions outside every
    feature are treated as always visible by the samplers."""
    seen: set[int] = set()
    for fid, positions in features:
        for p in positions:
            if not 0 <= p < length:
                raise ValueError(f"feature {fid!r} position {p} out of range")
            if p in seen:
                raise ValueError(f"position {p} claimed by two features")
            seen.add(p)
    ids = [fid for fid, _ in features]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate feature ids")
