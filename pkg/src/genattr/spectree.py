"""Speculative answer cache: a trie of previously decoded answers.

Attribution workloads re-decode a handful of distinct answers thousands of
times under different masks. The trie stores each answer once; a later call
greedily verifies the cached tokens against the backend's step scores and
only falls back to full autoregressive decoding when verification diverges,
in which case the new answer is grafted in. Returned answers are always
bit-identical to plain generation; the cache changes the bill, never the
result.

The trie also doubles as an attention template: `position_bias` realizes
relative offsets between ancestor pairs and `causal_mask` its boolean
shadow, so every stored answer can be verified in one batched pass by a
backend that understands tree attention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import Mask, TokenSeq
from .exceptions import TreeCapacityError
from .models.base import EOS, Backend, GenerationResult, Step

DEFAULT_CAPACITY = 256

# position_bias entry meaning "no ancestor relation"
ABSENT = -1


@dataclass
class SpecNode:
    """One trie node: a token at a depth, linked to its parent."""

    node_id: int
    token: str
    parent: int | None
    depth: int
    logprob: float | None = None
    terminal: bool = False


@dataclass(frozen=True)
class SpecStats:
    """Cache effect accounting.

    decoder_calls_saved books each hit as the full answer length minus one:
    the whole tree pass is costed as a single verification call no matter
    how many raw scoring steps it took.
    """

    hits: int = 0
    misses: int = 0
    grafts: int = 0
    decoder_calls_saved: int = 0

    def plus(self, other: "SpecStats") -> "SpecStats":
        return SpecStats(
            self.hits + other.hits,
            self.misses + other.misses,
            self.grafts + other.grafts,
            self.decoder_calls_saved + other.decoder_calls_saved,
        )


class SpecTree:
    """Insertion-ordered answer trie with single-writer grafting."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.nodes: list[SpecNode] = []
        self.answer_index: dict[str, int] = {}
        self.stats = SpecStats()
        self._children: dict[tuple[int | None, str], int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def child_of(self, parent: int | None, token: str) -> int | None:
        return self._children.get((parent, token))

    def node(self, node_id: int) -> SpecNode:
        return self.nodes[node_id]

    def answers(self) -> tuple[str, ...]:
        return tuple(self.answer_index)

    @property
    def is_full(self) -> bool:
        return len(self.answer_index) >= self.capacity

    def graft(
        self,
        tokens: list[str] | tuple[str, ...],
        logprobs: list[float | None] | tuple[float | None, ...] | None = None,
    ) -> int:
        """Insert an answer, sharing its longest existing prefix.

        Regrafting an indexed answer is a no-op except that supplied
        log-probabilities fill any the tree is still missing. Inserting a
        new answer past capacity is refused, never evicted around.
        """
        tokens = tuple(tokens)
        if not tokens:
            raise ValueError("cannot graft an empty answer")
        if logprobs is not None and len(logprobs) != len(tokens):
            raise ValueError("logprobs length does not match tokens")
        answer = " ".join(tokens)
        if answer not in self.answer_index and self.is_full:
            raise TreeCapacityError(
                f"answer cache is at capacity ({self.capacity} answers)"
            )
        parent: int | None = None
        for i, tok in enumerate(tokens):
            nid = self._children.get((parent, tok))
            if nid is None:
                nid = len(self.nodes)
                depth = 0 if parent is None else self.nodes[parent].depth + 1
                lp = logprobs[i] if logprobs is not None else None
                self.nodes.append(SpecNode(nid, tok, parent, depth, lp))
                self._children[(parent, tok)] = nid
            elif logprobs is not None and self.nodes[nid].logprob is None:
                self.nodes[nid].logprob = logprobs[i]
            parent = nid
        assert parent is not None
        self.nodes[parent].terminal = True
        self.answer_index.setdefault(answer, parent)
        return parent

    def logprob_of(self, answer: str) -> float | None:
        """Sum of node log-probabilities along the answer's path, or None if
        any node on the path has no score yet."""
        try:
            nid: int | None = self.answer_index[answer]
        except KeyError:
            raise KeyError(f"answer {answer!r} is not in the tree") from None
        total = 0.0
        while nid is not None:
            node = self.nodes[nid]
            if node.logprob is None:
                return None
            total += node.logprob
            nid = node.parent
        return total

    def _ancestor_chain(self, node_id: int) -> dict[int, int]:
        """Map ancestor-or-self id -> depth, walking parent links."""
        chain: dict[int, int] = {}
        nid: int | None = node_id
        while nid is not None:
            node = self.nodes[nid]
            chain[nid] = node.depth
            nid = node.parent
        return chain

    def position_bias(self) -> np.ndarray:
        """Relative-offset matrix over nodes in insertion order.

        Entry (a, b) is depth(a) - depth(b) when b is an ancestor of a or a
        itself, else ABSENT. Row a therefore describes how far back each
        attendable node sits on a's own path.
        """
        n = len(self.nodes)
        bias = np.full((n, n), ABSENT, dtype=int)
        for a in range(n):
            depth_a = self.nodes[a].depth
            for b, depth_b in self._ancestor_chain(a).items():
                bias[a, b] = depth_a - depth_b
        return bias

    def causal_mask(self) -> np.ndarray:
        """Boolean attention mask: a may attend b iff b is ancestor-or-self."""
        return self.position_bias() >= 0

    def dump_json(self) -> str:
        """Deterministic serialization for golden-file comparison."""
        bias = self.position_bias()
        payload = {
            "nodes": [
                {
                    "id": n.node_id,
                    "token": n.token,
                    "parent": n.parent,
                    "depth": n.depth,
                    "logprob": n.logprob,
                    "terminal": n.terminal,
                }
                for n in self.nodes
            ],
            "answers": dict(sorted(self.answer_index.items())),
            "position_bias": [
                [None if v == ABSENT else int(v) for v in row] for row in bias
            ],
            "causal_mask": [[int(v >= 0) for v in row] for row in bias],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def speculate_or_decode(
    tree: SpecTree,
    backend: Backend,
    x: TokenSeq,
    s: Mask,
    mode: str = "pad",
) -> tuple[GenerationResult, SpecStats]:
    """Answer from the cache when verification allows, else decode and graft.

    The walk asks the backend for the greedy token at each cached branch
    point; reaching a terminal with end-of-sequence next is a hit, costing
    zero decoder calls. Any divergence falls back to plain generation, whose
    result is returned untouched and grafted for next time. Backends that
    cannot score steps take the plain route unconditionally, so the cache
    still fills but never hits. The returned stats are this call's delta;
    the tree accumulates them too.
    """
    prefix: list[str] = []
    steps: list[Step] = []
    node_id: int | None = None
    hit = False
    if backend.describe().supports_step_scoring:
        while True:
            score = backend.score_step(x, s, tuple(prefix))
            g = score.argmax
            if g == EOS:
                hit = node_id is not None and tree.nodes[node_id].terminal
                break
            child = tree.child_of(node_id, g)
            if child is None:
                break
            lp = score.logprobs.get(g) if score.logprobs else None
            steps.append(Step(g, lp))
            prefix.append(g)
            node_id = child

    if hit:
        answer = " ".join(prefix)
        delta = SpecStats(hits=1, decoder_calls_saved=max(len(prefix) - 1, 0))
        tree.stats = tree.stats.plus(delta)
        return GenerationResult(answer, tuple(steps), decoder_calls=0), delta

    result = backend.generate(x, s, mode)
    tokens = tuple(result.answer.split())
    grafted = 0
    if tokens and not (
        result.answer not in tree.answer_index and tree.is_full
    ):
        before = len(tree.answer_index)
        lps = None
        if result.steps is not None and len(result.steps) == len(tokens):
            lps = [st.logprob for st in result.steps]
        tree.graft(tokens, lps)
        grafted = int(len(tree.answer_index) > before)
    delta = SpecStats(misses=1, grafts=grafted)
    tree.stats = tree.stats.plus(delta)
    return result, delta
