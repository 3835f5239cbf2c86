"""Backend contracts: toy readers, document-cache sessions, step scoring,
capability gating, and the HTTP client against a local stub."""

import math
from itertools import chain, combinations

import pytest

from genattr.core import HierarchyNode, HierarchySpec, Mask
from genattr.exceptions import (
    CapabilityError,
    GenerationOverflowError,
    StaleSessionError,
    TransportError,
)
from genattr.harness import ContextBuilder, EvalRecord, Passage
from genattr.models.base import EOS, Backend, score_answer
from genattr.models.remote import RemoteBackend
from genattr.models.toys import (
    ConstantBackend,
    NgramBackend,
    ScalarGameBackend,
    ToyKeywordReader,
    Vocabulary,
    VotingKeywordReader,
)


def reader_fixture():
    """Two keyword docs plus one filler doc, the canonical worked example."""
    record = EvalRecord(
        "q", "which", (
            Passage("D1", "", "kw1 filler1", None),
            Passage("D2", "", "kw2 filler2", None),
            Passage("D3", "", "filler3 filler4", None),
        ), ("A",),
    )
    builder = ContextBuilder()
    ctx = builder.context(record)
    backend = ToyKeywordReader({"kw1": "A", "kw2": "B"}, builder.vocab)
    return backend, ctx


def doc_mask(ctx, *pids):
    keep = set()
    for pid in pids:
        lo, hi = ctx.spans[pid]
        keep.update(range(lo, hi))
    return Mask.from_positions(len(ctx.x), keep)


class TestToyKeywordReader:
    def test_full_context_answers_first_doc(self):
        backend, ctx = reader_fixture()
        assert backend.generate(ctx.x, ctx.full_mask()).answer == "A"

    def test_masking_first_doc_falls_through(self):
        backend, ctx = reader_fixture()
        assert backend.generate(ctx.x, doc_mask(ctx, "D2", "D3")).answer == "B"

    def test_empty_mask_abstains(self):
        backend, ctx = reader_fixture()
        assert backend.generate(ctx.x, Mask.empty(len(ctx.x))).answer == "unknown"

    def test_partial_keyword_does_not_count(self):
        record = EvalRecord(
            "q", "", (Passage("D1", "", "alpha beta junk", None),), ("x",),
        )
        builder = ContextBuilder()
        ctx = builder.context(record)
        backend = ToyKeywordReader({"alpha beta": "X"}, builder.vocab)
        lo, _ = ctx.spans["D1"]
        # hide "beta": the two-token keyword is no longer fully visible
        s = Mask.from_positions(
            len(ctx.x), set(range(len(ctx.x))) - {lo + 2}
        )
        assert backend.generate(ctx.x, ctx.full_mask()).answer == "X"
        assert backend.generate(ctx.x, s).answer == "unknown"

    def test_determinism_repeated(self):
        backend, ctx = reader_fixture()
        s = doc_mask(ctx, "D1", "D3")
        first = backend.generate(ctx.x, s)
        for _ in range(999):
            again = backend.generate(ctx.x, s)
            assert again.answer == first.answer
            assert again.steps == first.steps

    def test_decoder_calls_grow_by_answer_length(self):
        builder = ContextBuilder()
        record = EvalRecord(
            "q", "", (Passage("D1", "", "kw here", None),), ("x",),
        )
        ctx = builder.context(record)
        backend = ToyKeywordReader({"kw": "two words"}, builder.vocab)
        before = backend.stats.snapshot()
        result = backend.generate(ctx.x, ctx.full_mask())
        assert result.answer == "two words"
        assert backend.stats.since(before).decoder_calls == 2


class TestVotingReader:
    def test_majority_beats_first_position(self):
        record = EvalRecord(
            "q", "", (
                Passage("D1", "", "kwb junk", None),
                Passage("D2", "", "kwa kwa", None),
            ), ("a",),
        )
        builder = ContextBuilder()
        ctx = builder.context(record)
        backend = VotingKeywordReader({"kwa": "a", "kwb": "b"}, builder.vocab)
        assert backend.generate(ctx.x, ctx.full_mask()).answer == "a"

    def test_tie_goes_to_earliest_occurrence(self):
        record = EvalRecord(
            "q", "", (
                Passage("D1", "", "kwb junk", None),
                Passage("D2", "", "kwa junk", None),
            ), ("a",),
        )
        builder = ContextBuilder()
        ctx = builder.context(record)
        backend = VotingKeywordReader({"kwa": "a", "kwb": "b"}, builder.vocab)
        assert backend.generate(ctx.x, ctx.full_mask()).answer == "b"


class TestEncodingSession:
    def test_encoder_billed_once_per_document(self):
        backend, ctx = reader_fixture()
        h = two_level(ctx)
        session = backend.precompute_encodings(ctx.x, h)
        assert backend.stats.encoder_calls == 3
        for _ in range(100):
            session.generate_with_doc_subset(("D1",))
        assert backend.stats.encoder_calls == 3

    def test_full_subset_matches_plain_generate(self):
        backend, ctx = reader_fixture()
        session = backend.precompute_encodings(ctx.x, two_level(ctx))
        via_session = session.generate_with_doc_subset(("D1", "D2", "D3"))
        plain = backend.generate(ctx.x, ctx.full_mask(), "drop")
        assert via_session.answer == plain.answer

    def test_empty_subset_abstains(self):
        backend, ctx = reader_fixture()
        session = backend.precompute_encodings(ctx.x, two_level(ctx))
        assert session.generate_with_doc_subset(()).answer == "unknown"

    def test_exhaustive_equivalence_with_uncached_path(self):
        backend, ctx = reader_fixture()
        h = two_level(ctx)
        session = backend.precompute_encodings(ctx.x, h)
        docs = ("D1", "D2", "D3")
        for r in range(len(docs) + 1):
            for subset in combinations(docs, r):
                cached = session.generate_with_doc_subset(subset).answer
                plain = backend.generate(
                    ctx.x, doc_mask(ctx, *subset), "drop"
                ).answer
                assert cached == plain, subset

    def test_closed_session_is_stale(self):
        backend, ctx = reader_fixture()
        session = backend.precompute_encodings(ctx.x, two_level(ctx))
        session.close()
        with pytest.raises(StaleSessionError):
            session.generate_with_doc_subset(("D1",))

    def test_unknown_doc_id(self):
        backend, ctx = reader_fixture()
        session = backend.precompute_encodings(ctx.x, two_level(ctx))
        with pytest.raises(KeyError):
            session.generate_with_doc_subset(("D9",))


def two_level(ctx):
    from genattr.harness import context_hierarchy

    return context_hierarchy(ctx)


class TestStepScoring:
    def test_first_step_matches_generate(self):
        backend, ctx = reader_fixture()
        s = ctx.full_mask()
        first = backend.generate(ctx.x, s).answer.split()[0]
        assert backend.score_step(ctx.x, s, ()).argmax == first

    def test_full_prefix_scores_eos(self):
        backend, ctx = reader_fixture()
        s = ctx.full_mask()
        words = tuple(backend.generate(ctx.x, s).answer.split())
        assert backend.score_step(ctx.x, s, words).argmax == EOS

    def test_bills_verification_calls(self):
        backend, ctx = reader_fixture()
        before = backend.stats.snapshot()
        backend.score_step(ctx.x, ctx.full_mask(), ())
        assert backend.stats.since(before).verification_calls == 1

    def test_ngram_scores_match_table(self):
        transitions = {
            (): {"the": math.log(0.9), "a": math.log(0.1)},
            ("the",): {"end": math.log(1.0)},
        }
        backend = NgramBackend(transitions)
        x = seq_of_len(1)
        score = backend.score_step(x, Mask.full(1), ())
        assert score.argmax == "the"
        assert score.logprobs == pytest.approx(transitions[()])

    def test_ngram_overflow_raises(self):
        # self-loop never terminates; the walk must refuse, not truncate
        backend = NgramBackend({("x",) * k: {"x": 0.0} for k in range(100)})
        backend.max_output_tokens = 8
        with pytest.raises(GenerationOverflowError):
            backend.generate(seq_of_len(1), Mask.full(1))


def seq_of_len(n):
    from genattr.core import TokenSeq

    return TokenSeq(tuple([2] * n), vocab_size=10, pad_id=1)


class TestCapabilities:
    def test_unadvertised_scoring_raises(self):
        class Mute(Backend):
            def describe(self):
                from genattr.models.base import BackendDescriptor

                return BackendDescriptor()

            def _answer(self, x, s, mode):
                return "A"

        backend = Mute()
        with pytest.raises(CapabilityError):
            backend.score_step(seq_of_len(1), Mask.full(1), ())
        with pytest.raises(CapabilityError):
            backend.precompute_encodings(seq_of_len(1), None)

    def test_score_answer_requires_logprobs(self):
        backend = ConstantBackend("A")
        with pytest.raises(CapabilityError):
            score_answer(backend, seq_of_len(1), Mask.full(1), "A")

    def test_scalar_game_recovers_value(self):
        value = lambda pos: -0.5 * (2 - len(pos))
        backend = ScalarGameBackend("target", value)
        x = seq_of_len(2)
        got = score_answer(backend, x, Mask.full(2), "target")
        assert got == pytest.approx(0.0)
        got = score_answer(backend, x, Mask.empty(2), "target")
        assert got == pytest.approx(-1.0)


class TestRemoteBackend:
    def make(self, endpoint, **kw):
        vocab = Vocabulary()
        x = vocab.encode(("hello", "world"))
        return RemoteBackend(vocab, endpoint=endpoint, **kw), x

    def test_fixed_answer(self, http_stub):
        endpoint, state = http_stub
        backend, x = self.make(endpoint)
        result = backend.generate(x, Mask.full(2))
        assert result.answer == "A"
        path, body = state.requests[0]
        assert path == "/generate"
        assert body["mask"] == [1, 1]
        assert body["mode"] == "pad"

    def test_server_error_retries_then_raises(self, http_stub):
        endpoint, state = http_stub
        backend, x = self.make(endpoint, retries=2)
        state.script = [500, 500, 500]
        with pytest.raises(TransportError):
            backend.generate(x, Mask.full(2))
        assert len(state.requests) == 3

    def test_recovers_within_retry_budget(self, http_stub):
        endpoint, state = http_stub
        backend, x = self.make(endpoint, retries=2)
        state.script = [500, {"answer": "B"}]
        assert backend.generate(x, Mask.full(2)).answer == "B"

    def test_missing_steps_accepted_without_logprob_support(self, http_stub):
        endpoint, state = http_stub
        backend, x = self.make(endpoint)
        state.script = [{"answer": "bare"}]
        result = backend.generate(x, Mask.full(2))
        assert result.steps is None
        assert not backend.describe().supports_logprobs

    def test_malformed_response_raises(self, http_stub):
        endpoint, state = http_stub
        backend, x = self.make(endpoint, retries=0)
        state.script = [{"nonsense": 1}]
        with pytest.raises(TransportError):
            backend.generate(x, Mask.full(2))

    def test_endpoint_from_environment(self, http_stub, monkeypatch):
        endpoint, _ = http_stub
        monkeypatch.setenv("GENATTR_ENDPOINT", endpoint)
        vocab = Vocabulary()
        backend = RemoteBackend(vocab)
        assert backend.endpoint == endpoint

    def test_no_endpoint_anywhere(self, monkeypatch):
        monkeypatch.delenv("GENATTR_ENDPOINT", raising=False)
        with pytest.raises(ValueError):
            RemoteBackend(Vocabulary())
