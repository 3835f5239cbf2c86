"""Deterministic toy backends.

These exist so estimator behaviour can be checked against exhaustive
enumeration: each one's answer is a pure function of the visible position
set, which makes pad and drop masking interchangeable and lets oracle code
evaluate the same rule the sampler sees.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from ..core import HierarchySpec, Mask, TokenSeq
from ..exceptions import GenerationOverflowError
from ..textnorm import ABSTAIN
from .base import (
    EOS,
    Backend,
    BackendDescriptor,
    EncodingSession,
    GenerationResult,
    Step,
    StepScore,
)

PAD_WORD = "<pad>"
SEPARATOR = "|"


class Vocabulary:
    """Word-level interning vocabulary; id 1 is the pad token."""

    def __init__(self):
        self._word_to_id: dict[str, int] = {PAD_WORD: 1}
        self._id_to_word: list[str] = [PAD_WORD]

    def add(self, word: str) -> int:
        wid = self._word_to_id.get(word)
        if wid is None:
            self._id_to_word.append(word)
            wid = len(self._id_to_word)
            self._word_to_id[word] = wid
        return wid

    def id_of(self, word: str) -> int:
        return self._word_to_id[word]

    def word_of(self, wid: int) -> str:
        return self._id_to_word[wid - 1]

    def __len__(self) -> int:
        return len(self._id_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self._word_to_id

    def encode(self, words: Sequence[str]) -> TokenSeq:
        """Intern `words` and freeze them into a TokenSeq against the current
        vocabulary size."""
        ids = tuple(self.add(w) for w in words)
        return TokenSeq(ids, vocab_size=len(self), pad_id=1)

    def decode(self, x: TokenSeq) -> list[str]:
        return [self.word_of(t) for t in x.tokens]


def _doc_segments(
    x: TokenSeq,
    separator_id: int | None,
    doc_spans: tuple[tuple[int, int], ...] | None,
) -> list[tuple[int, int]]:
    """Half-open [start, end) position ranges of the documents in `x`.

    Explicit spans win; otherwise each occurrence of the separator token
    starts a new document (the separator belongs to the document it opens).
    """
    if doc_spans is not None:
        return list(doc_spans)
    if separator_id is None:
        return [(0, len(x))] if len(x) else []
    starts = [i for i, t in enumerate(x.tokens) if t == separator_id]
    if not starts:
        return [(0, len(x))] if len(x) else []
    spans = []
    for j, s in enumerate(starts):
        e = starts[j + 1] if j + 1 < len(starts) else len(x)
        spans.append((s, e))
    return spans


@dataclass(frozen=True)
class _Occurrence:
    doc_index: int
    table_order: int
    answer: str
    positions: frozenset[int]
    first_position: int


class _KeywordBackend(Backend):
    """Shared plumbing: keyword occurrence scanning and step scoring."""

    def __init__(
        self,
        keywords: Mapping[str, str],
        vocab: Vocabulary,
        doc_spans: Sequence[tuple[int, int]] | None = None,
        separator: str = SEPARATOR,
    ):
        super().__init__()
        self.keywords = dict(keywords)
        self.vocab = vocab
        self.doc_spans = tuple(doc_spans) if doc_spans is not None else None
        self.separator = separator
        self._keyword_ids = [
            (order, tuple(vocab.add(w) for w in phrase.split()), answer)
            for order, (phrase, answer) in enumerate(self.keywords.items())
        ]
        # first-token index keeps the scan linear even with huge tables
        self._by_first: dict[int, list[tuple[int, tuple[int, ...], str]]] = {}
        for entry in self._keyword_ids:
            self._by_first.setdefault(entry[1][0], []).append(entry)
        self._plans: dict[TokenSeq, list[_Occurrence]] = {}

    def describe(self) -> BackendDescriptor:
        return BackendDescriptor(
            supports_logprobs=False,
            supports_doc_cache=True,
            supports_step_scoring=True,
            reentrant=True,
        )

    def precompute_encodings(self, x: TokenSeq, h: HierarchySpec) -> EncodingSession:
        return EncodingSession(self, x, h)

    def _plan(self, x: TokenSeq) -> list[_Occurrence]:
        plan = self._plans.get(x)
        if plan is None:
            sep_id = (
                self.vocab.id_of(self.separator) if self.separator in self.vocab else None
            )
            spans = _doc_segments(x, sep_id, self.doc_spans)
            plan = []
            for doc_index, (lo, hi) in enumerate(spans):
                for i in range(lo, hi):
                    for order, kw_ids, answer in self._by_first.get(x.tokens[i], ()):
                        n = len(kw_ids)
                        if i + n <= hi and x.tokens[i : i + n] == kw_ids:
                            plan.append(
                                _Occurrence(
                                    doc_index, order, answer,
                                    frozenset(range(i, i + n)), i,
                                )
                            )
            plan.sort(key=lambda o: (o.doc_index, o.table_order, o.first_position))
            self._plans[x] = plan
        return plan

    def score_step(self, x: TokenSeq, s: Mask, prefix: tuple[str, ...]) -> StepScore:
        self.stats.verification_calls += 1
        words = tuple(self._answer(x, s, "pad").split())
        k = len(prefix)
        if prefix == words[:k] and k < len(words):
            return StepScore(argmax=words[k])
        return StepScore(argmax=EOS)


class ToyKeywordReader(_KeywordBackend):
    """Answers from the lowest-indexed document holding a fully visible keyword.

    The keyword table maps word phrases to answer strings. A phrase counts
    only when every one of its token positions is visible; ties inside one
    document fall back to keyword-table order. No visible keyword anywhere
    means abstention.

    `window`, when set, restricts reading to the first `window` documents,
    which models a reader that never attends past the front of its context.
    """

    def __init__(
        self,
        keywords: Mapping[str, str],
        vocab: Vocabulary,
        doc_spans: Sequence[tuple[int, int]] | None = None,
        separator: str = SEPARATOR,
        window: int | None = None,
    ):
        super().__init__(keywords, vocab, doc_spans, separator)
        self.window = window

    def _answer(self, x: TokenSeq, s: Mask, mode: str) -> str:
        visible = s.positions
        for occ in self._plan(x):
            if self.window is not None and occ.doc_index >= self.window:
                break
            if occ.positions <= visible:
                return occ.answer
        return ABSTAIN


class VotingKeywordReader(_KeywordBackend):
    """Answers by visible-occurrence majority across the whole context.

    Each fully visible keyword occurrence is one vote for its answer; the
    answer with the most votes wins. Ties break toward the earliest visible
    occurrence (document index, then position), then keyword-table order, so
    planting an answer twice beats any single mention regardless of where
    the mentions sit.
    """

    def _answer(self, x: TokenSeq, s: Mask, mode: str) -> str:
        visible = s.positions
        votes: dict[str, int] = {}
        earliest: dict[str, tuple[int, int, int]] = {}
        for occ in self._plan(x):
            if occ.positions <= visible:
                votes[occ.answer] = votes.get(occ.answer, 0) + 1
                key = (occ.doc_index, occ.first_position, occ.table_order)
                if occ.answer not in earliest or key < earliest[occ.answer]:
                    earliest[occ.answer] = key
        if not votes:
            return ABSTAIN
        return min(votes, key=lambda a: (-votes[a], earliest[a]))


class ScalarGameBackend(Backend):
    """A fixed target answer whose log-probability is an explicit set function.

    `value` maps the visible position set to a log-probability (<= 0). The
    whole value is carried by the target's first token, so scoring the target
    under any mask recovers `value` exactly. Useful as a hand-computable
    game for the scalar attribution route.
    """

    def __init__(self, target: str, value: Callable[[frozenset[int]], float]):
        super().__init__()
        self.target = target
        self.value = value
        self._words = tuple(target.split())

    def describe(self) -> BackendDescriptor:
        return BackendDescriptor(
            supports_logprobs=True, supports_step_scoring=True, reentrant=True
        )

    def _answer(self, x: TokenSeq, s: Mask, mode: str) -> str:
        return self.target

    def score_step(self, x: TokenSeq, s: Mask, prefix: tuple[str, ...]) -> StepScore:
        self.stats.verification_calls += 1
        k = len(prefix)
        if prefix != self._words[:k] or k >= len(self._words):
            return StepScore(argmax=EOS, logprobs={EOS: 0.0})
        v = float(self.value(s.positions))
        if v > 0:
            raise ValueError(f"value function returned {v} > 0; expected a log-prob")
        lp = v if k == 0 else 0.0
        return StepScore(argmax=self._words[k], logprobs={self._words[k]: lp})


class ConstantBackend(Backend):
    """Same answer under every mask; the null game."""

    def __init__(self, answer: str):
        super().__init__()
        self.answer = answer

    def describe(self) -> BackendDescriptor:
        return BackendDescriptor(supports_step_scoring=True, reentrant=True)

    def _answer(self, x: TokenSeq, s: Mask, mode: str) -> str:
        return self.answer

    def score_step(self, x: TokenSeq, s: Mask, prefix: tuple[str, ...]) -> StepScore:
        self.stats.verification_calls += 1
        words = tuple(self.answer.split())
        k = len(prefix)
        if prefix == words[:k] and k < len(words):
            return StepScore(argmax=words[k])
        return StepScore(argmax=EOS)


class NgramBackend(Backend):
    """Greedy decoding over an explicit transition table.

    `transitions` maps a prefix tuple to next-token log-probabilities.
    Missing prefixes terminate; a walk longer than `max_output_tokens`
    raises rather than truncating silently.
    """

    def __init__(self, transitions: Mapping[tuple[str, ...], Mapping[str, float]]):
        super().__init__()
        self.transitions = {k: dict(v) for k, v in transitions.items()}

    def describe(self) -> BackendDescriptor:
        return BackendDescriptor(
            supports_logprobs=True, supports_step_scoring=True, reentrant=True
        )

    @staticmethod
    def _argmax(dist: Mapping[str, float]) -> str:
        return sorted(dist.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]

    def _walk(self) -> list[tuple[str, float]]:
        out: list[tuple[str, float]] = []
        prefix: tuple[str, ...] = ()
        while True:
            dist = self.transitions.get(prefix)
            if dist is None:
                return out
            tok = self._argmax(dist)
            if tok == EOS:
                return out
            out.append((tok, dist[tok]))
            prefix = prefix + (tok,)
            if len(out) > self.max_output_tokens:
                raise GenerationOverflowError(
                    f"walk exceeded {self.max_output_tokens} tokens"
                )

    def _answer(self, x: TokenSeq, s: Mask, mode: str) -> str:
        return " ".join(tok for tok, _ in self._walk())

    def generate(self, x: TokenSeq, s: Mask, mode: str = "pad") -> GenerationResult:
        if len(s) != len(x):
            raise ValueError(f"mask length {len(s)} != sequence length {len(x)}")
        walked = self._walk()
        steps = tuple(Step(tok, lp) for tok, lp in walked)
        self.stats.decoder_calls += len(steps)
        return GenerationResult(
            " ".join(t for t, _ in walked), steps, decoder_calls=len(steps)
        )

    def score_step(self, x: TokenSeq, s: Mask, prefix: tuple[str, ...]) -> StepScore:
        self.stats.verification_calls += 1
        dist = self.transitions.get(tuple(prefix))
        if dist is None:
            return StepScore(argmax=EOS, logprobs={EOS: 0.0})
        return StepScore(argmax=self._argmax(dist), logprobs=dict(dist))
