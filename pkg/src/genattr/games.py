"""Built-in toy games: small masked-reader setups whose exact attributions
are enumerable, used by the oracle-check command and the correctness suite.

Every game stays at n <= 6 features so the factorial and subset oracles run
in milliseconds. Games are built fresh on each request: backends carry call
counters and caches, and sharing instances across runs would entangle them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Feature, TokenSeq
from .models.base import Backend
from .models.toys import ToyKeywordReader, Vocabulary, VotingKeywordReader


@dataclass(frozen=True)
class ToyGame:
    name: str
    backend: Backend
    x: TokenSeq
    features: tuple[Feature, ...]
    mode: str = "pad"

    @property
    def num_features(self) -> int:
        return len(self.features)


def _context(words: str, spans: list[tuple[int, int]]):
    vocab = Vocabulary()
    x = vocab.encode(words.split())
    features = tuple(
        (f"d{i}", tuple(range(lo, hi))) for i, (lo, hi) in enumerate(spans)
    )
    return vocab, x, features


def _three_docs() -> ToyGame:
    # d0 answers ansa, d1 answers ansb, d2 is pure filler
    vocab, x, features = _context("ka f1 kb f2 f3 f4", [(0, 2), (2, 4), (4, 6)])
    reader = ToyKeywordReader({"ka": "ansa", "kb": "ansb"}, vocab, doc_spans=[(0, 2), (2, 4), (4, 6)])
    return ToyGame("three_docs", reader, x, features)


def _symmetric_pair() -> ToyGame:
    # both docs carry the same keyword; attributions must come out equal
    vocab, x, features = _context("ka f1 ka f2", [(0, 2), (2, 4)])
    reader = ToyKeywordReader({"ka": "same"}, vocab, doc_spans=[(0, 2), (2, 4)])
    return ToyGame("symmetric_pair", reader, x, features)


def _dummy_feature() -> ToyGame:
    # d2 never changes any answer: its attribution must vanish identically
    vocab, x, features = _context("ka f1 kb f2 f3 f4 f5 f6", [(0, 2), (2, 4), (4, 8)])
    reader = ToyKeywordReader(
        {"ka": "ansa", "kb": "ansb"}, vocab, doc_spans=[(0, 2), (2, 4), (4, 8)]
    )
    return ToyGame("dummy_feature", reader, x, features)


def _phrase_answer() -> ToyGame:
    # a two-word keyword split across one doc, plus a multi-token answer
    vocab = Vocabulary()
    x = vocab.encode("alpha beta f1 gamma f2 f3".split())
    spans = [(0, 3), (3, 6)]
    features = tuple((f"d{i}", tuple(range(lo, hi))) for i, (lo, hi) in enumerate(spans))
    reader = ToyKeywordReader(
        {"alpha beta": "long answer", "gamma": "short"}, vocab, doc_spans=spans
    )
    return ToyGame("phrase_answer", reader, x, features)


def _voting_majority() -> ToyGame:
    # gold planted twice in d1 outvotes single decoys in d0 and d3
    vocab = Vocabulary()
    x = vocab.encode("kd f1 kg kg f2 f3 ke f4".split())
    spans = [(0, 2), (2, 5), (5, 6), (6, 8)]
    features = tuple((f"d{i}", tuple(range(lo, hi))) for i, (lo, hi) in enumerate(spans))
    reader = VotingKeywordReader(
        {"kg": "gold", "kd": "deca", "ke": "decb"}, vocab, doc_spans=spans
    )
    return ToyGame("voting_majority", reader, x, features)


def _six_docs() -> ToyGame:
    # six docs, shared answers across d0/d3, independent d1/d5, filler rest
    vocab = Vocabulary()
    x = vocab.encode("ka f1 kb f2 f3 f4 ka f5 f6 f7 f8 kc".split())
    spans = [(0, 2), (2, 4), (4, 5), (5, 7), (7, 9), (9, 12)]
    features = tuple((f"d{i}", tuple(range(lo, hi))) for i, (lo, hi) in enumerate(spans))
    reader = ToyKeywordReader(
        {"ka": "ansa", "kb": "ansb", "kc": "ansc"}, vocab, doc_spans=spans
    )
    return ToyGame("six_docs", reader, x, features)


_BUILDERS = {
    "three_docs": _three_docs,
    "symmetric_pair": _symmetric_pair,
    "dummy_feature": _dummy_feature,
    "phrase_answer": _phrase_answer,
    "voting_majority": _voting_majority,
    "six_docs": _six_docs,
}

GAME_NAMES: tuple[str, ...] = tuple(_BUILDERS)


def build_game(name: str) -> ToyGame:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown game {name!r}; available: {', '.join(GAME_NAMES)}") from None
    return builder()


def all_games() -> list[ToyGame]:
    return [build_game(name) for name in GAME_NAMES]
