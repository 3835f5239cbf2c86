"""Dataset ingestion, answer matching, and the evaluation workflows built
on attribution tables: reranking, distillation, votes, pseudo-labels, and
the position sweep."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genattr.core import AttributionTable
from genattr.exceptions import DatasetSchemaError
from genattr.harness import (
    ContextBuilder,
    EvalRecord,
    Passage,
    RankedList,
    answer_match,
    attribution_to_json,
    auc,
    distill_top_answers,
    load_dataset,
    majority_vote,
    normalize_answer,
    passage_relevant,
    position_sweep,
    pseudo_label,
    recall_at_k,
    rerank_by_attribution,
    top_k_accuracy,
    write_jsonl,
)
from genattr.models.base import Backend, BackendDescriptor
from genattr.models.toys import ToyKeywordReader, VotingKeywordReader

VALID_LINE = (
    '{"query_id": "q1", "question": "who", "passages": '
    '[{"id": "p1", "title": "t", "text": "x", "label": "relevant"}], '
    '"gold_answers": ["a"]}'
)


class TestLoader:
    def test_two_valid_lines(self, tmp_path):
        f = tmp_path / "d.jsonl"
        f.write_text(VALID_LINE + "\n" + VALID_LINE.replace("q1", "q2") + "\n")
        records = list(load_dataset(f))
        assert [r.query_id for r in records] == ["q1", "q2"]

    def test_empty_file_is_empty_stream(self, tmp_path):
        f = tmp_path / "d.jsonl"
        f.write_text("")
        assert list(load_dataset(f)) == []

    def test_blank_lines_skipped(self, tmp_path):
        f = tmp_path / "d.jsonl"
        f.write_text("\n" + VALID_LINE + "\n\n")
        assert len(list(load_dataset(f))) == 1

    def test_missing_field_names_line_and_field(self, tmp_path):
        f = tmp_path / "d.jsonl"
        f.write_text(
            VALID_LINE + "\n"
            '{"query_id": "q2", "passages": [], "gold_answers": ["a"]}\n'
        )
        with pytest.raises(DatasetSchemaError, match=r"line 2.*question"):
            list(load_dataset(f))

    def test_invalid_json_names_line(self, tmp_path):
        f = tmp_path / "d.jsonl"
        f.write_text("{nope\n")
        with pytest.raises(DatasetSchemaError, match="line 1"):
            list(load_dataset(f))

    def test_unknown_keys_rejected(self, tmp_path):
        f = tmp_path / "d.jsonl"
        f.write_text(VALID_LINE[:-1] + ', "extra": 1}\n')
        with pytest.raises(DatasetSchemaError, match="unknown keys"):
            list(load_dataset(f))

    def test_bad_label_pinned_to_passage(self, tmp_path):
        f = tmp_path / "d.jsonl"
        f.write_text(VALID_LINE.replace('"relevant"', '"maybe"'))
        with pytest.raises(DatasetSchemaError, match=r"passages\[0\].label"):
            list(load_dataset(f))

    def test_duplicate_passage_ids_rejected(self, tmp_path):
        f = tmp_path / "d.jsonl"
        line = VALID_LINE.replace(
            '"passages": [{',
            '"passages": [{"id": "p1", "title": "", "text": "y", "label": null}, {',
        )
        f.write_text(line + "\n")
        with pytest.raises(DatasetSchemaError):
            list(load_dataset(f))

    def test_round_trip(self, tmp_path):
        record = EvalRecord(
            "q9", "what", (Passage("p1", "t", "body", None),), ("ans",)
        )
        f = tmp_path / "out.jsonl"
        write_jsonl([record], f)
        assert list(load_dataset(f)) == [record]


class TestNormalize:
    def test_strips_punctuation_and_case(self):
        assert normalize_answer("The Answer!") == "the answer"

    def test_collapses_whitespace(self):
        assert (
            normalize_answer("  Wilhelm  Conrad   Rontgen ")
            == "wilhelm conrad rontgen"
        )

    def test_compatibility_form(self):
        assert normalize_answer("Röntgen") == "rontgen"

    @given(st.text(max_size=60))
    @settings(max_examples=200)
    def test_idempotent(self, text):
        once = normalize_answer(text)
        assert normalize_answer(once) == once


class TestMatching:
    def test_candidate_with_punctuation(self):
        assert answer_match("Rontgen.", ("rontgen",))

    def test_containment_relevance(self):
        p = Passage("p", "", "then wilhelm conrad rontgen discovered x rays", None)
        assert passage_relevant(p, ("Rontgen",))

    def test_empty_gold_never_matches(self):
        assert not answer_match("anything", ())
        assert not passage_relevant(Passage("p", "", "text", None), ())

    def test_empty_candidate_never_matches(self):
        assert not answer_match("", ("a",))


def record_of(pids, labels=None, texts=None):
    labels = labels or [None] * len(pids)
    texts = texts or [f"text {pid}" for pid in pids]
    return EvalRecord(
        "q", "which", tuple(
            Passage(pid, "", text, label)
            for pid, text, label in zip(pids, texts, labels)
        ), ("ansa",),
    )


def table_of(counts, sample_count):
    return AttributionTable.from_counts(tuple(counts), counts, sample_count)


class TestRerank:
    def test_sorts_by_mass(self):
        t = table_of({"P1": {"x": 2}, "P2": {"x": 9}, "P3": {}}, 10)
        ranked = rerank_by_attribution(record_of(["P1", "P2", "P3"]), t)
        assert ranked.ids == ("P2", "P1", "P3")

    def test_zero_mass_preserves_retriever_order(self):
        t = table_of({"P1": {}, "P2": {}, "P3": {}}, 4)
        ranked = rerank_by_attribution(record_of(["P1", "P2", "P3"]), t)
        assert ranked.ids == ("P1", "P2", "P3")

    def test_enumeration_values_rank_in_mass_order(self):
        t = table_of({"d0": {"ansa": 6}, "d1": {"ansb": 3}, "d2": {}}, 6)
        ranked = rerank_by_attribution(record_of(["d0", "d1", "d2"]), t)
        assert ranked.ids == ("d0", "d1", "d2")
        assert ranked.score_of("d1") == Fraction(1, 2)

    def test_key_mismatch_rejected(self):
        t = table_of({"P1": {}}, 1)
        with pytest.raises(ValueError):
            rerank_by_attribution(record_of(["P1", "P2"]), t)

    def test_abstention_mass_does_not_rank(self):
        t = table_of({"P1": {"unknown": 9}, "P2": {"x": 1}}, 10)
        ranked = rerank_by_attribution(record_of(["P1", "P2"]), t)
        assert ranked.ids == ("P2", "P1")

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=40)
    def test_output_is_a_permutation(self, seed):
        rng = np.random.default_rng(seed)
        pids = [f"p{i}" for i in range(int(rng.integers(1, 8)))]
        counts = {
            pid: ({"x": int(rng.integers(0, 5))} if rng.random() < 0.8 else {})
            for pid in pids
        }
        ranked = rerank_by_attribution(
            record_of(pids), table_of(counts, 6)
        )
        assert sorted(ranked.ids) == sorted(pids)


class TestRecallAuc:
    def rankings_with_relevant_at(self, ranks, width):
        """One record per requested rank; the relevant passage is labeled."""
        records, rankings = [], []
        for i, rank in enumerate(ranks):
            pids = [f"r{i}p{j}" for j in range(width)]
            labels = ["irrelevant"] * width
            labels[rank - 1] = "relevant"
            records.append(record_of(pids, labels))
            rankings.append(
                RankedList(tuple((pid, Fraction(0)) for pid in pids))
            )
        return records, rankings

    def test_two_record_curve(self):
        records, rankings = self.rankings_with_relevant_at([1, 3], 3)
        curve = recall_at_k(records, rankings, 3)
        assert curve == (0.5, 0.5, 1.0)
        assert auc(curve) == pytest.approx(66.67, abs=0.005)

    def test_all_relevant_first(self):
        records, rankings = self.rankings_with_relevant_at([1, 1, 1], 4)
        assert auc(recall_at_k(records, rankings, 4)) == 100.0

    def test_record_order_invariance(self):
        records, rankings = self.rankings_with_relevant_at([2, 4, 1, 3], 4)
        forward = recall_at_k(records, rankings, 4)
        backward = recall_at_k(records[::-1], rankings[::-1], 4)
        assert forward == backward

    @given(st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=12))
    def test_auc_equals_mean_oracle(self, curve):
        # the mean definition, summed independently
        expected = 100.0 * sum(curve) / len(curve)
        assert auc(tuple(curve)) == pytest.approx(expected)

    def test_ranking_must_be_a_permutation(self):
        records, rankings = self.rankings_with_relevant_at([1], 3)
        bad = RankedList((("r0p0", Fraction(0)), ("other", Fraction(0))))
        with pytest.raises(ValueError):
            recall_at_k(records, [bad], 2)


class TestDistill:
    def test_enumeration_table(self):
        t = table_of({"d0": {"ansa": 6}, "d1": {"ansb": 3}, "d2": {}}, 6)
        assert distill_top_answers(t, 5) == ["ansa", "ansb"]
        assert distill_top_answers(t, 1) == ["ansa"]

    def test_empty_table(self):
        assert distill_top_answers(AttributionTable.empty(("d0",)), 3) == []

    def test_abstention_excluded(self):
        t = table_of({"d0": {"unknown": 9, "real": 1}}, 9)
        assert distill_top_answers(t, 3) == ["real"]

    def test_lexicographic_tie_break(self):
        t = table_of({"d0": {"zzz": 2, "aaa": 2}}, 4)
        assert distill_top_answers(t, 2) == ["aaa", "zzz"]


class VoteScript(Backend):
    """Answers drawn from a fixed per-passage script, keyed by which single
    passage is visible."""

    def __init__(self, by_index):
        super().__init__()
        self.by_index = by_index
        self.spans = None

    def describe(self):
        return BackendDescriptor(reentrant=True)

    def _answer(self, x, s, mode):
        # single-passage contexts only: everything visible
        return self.by_index.pop(0) if self.by_index else "unknown"


class TestMajorityVote:
    def test_vote_counting(self):
        record = record_of(["p1", "p2", "p3", "p4"])
        backend = VoteScript(["A", "A", "B", "unknown"])
        builder = ContextBuilder()
        assert majority_vote(record, backend, 3, builder=builder) == ["a", "b"]

    def test_all_abstain(self):
        record = record_of(["p1", "p2"])
        backend = VoteScript(["unknown", "unknown"])
        assert majority_vote(record, backend, 3, builder=ContextBuilder()) == []

    def test_single_passage(self):
        record = record_of(["p1"])
        backend = VoteScript(["A"])
        assert majority_vote(record, backend, 2, builder=ContextBuilder()) == ["a"]


class TestTopK:
    def test_hit_at_two(self):
        record = EvalRecord("q", "w", (Passage("p1", "", "x", None),), ("a",))
        assert top_k_accuracy([record], [["b", "a"]], 2) == 1.0
        assert top_k_accuracy([record], [["b", "a"]], 1) == 0.0

    def test_empty_candidates(self):
        record = EvalRecord("q", "w", (Passage("p1", "", "x", None),), ("a",))
        assert top_k_accuracy([record], [[]], 3) == 0.0

    @given(st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=4))
    def test_non_decreasing_in_k(self, candidates):
        record = EvalRecord("q", "w", (Passage("p1", "", "x", None),), ("a",))
        accs = [top_k_accuracy([record], [candidates], k) for k in (1, 2, 3, 4)]
        assert accs == sorted(accs)


class TestPseudoLabel:
    def make_record(self):
        return EvalRecord(
            "q", "w", (
                Passage("P1", "", "kwgold here", "relevant"),
                Passage("P2", "", "empty stuff", "irrelevant"),
                Passage("P3", "", "mentions pseudoans too", None),
            ), ("original",),
        )

    def test_containment_relabels_unlabeled_passage(self):
        builder = ContextBuilder()
        record = self.make_record()
        backend = ToyKeywordReader({"kwgold": "pseudoans"}, builder.vocab)
        out = pseudo_label(record, backend, builder=builder)
        assert "pseudoans" in out.gold_answers
        assert out.passage("P3").label == "relevant"
        assert out.passage("P1").label == "relevant"
        assert out.passage("P2").label == "irrelevant"

    def test_abstaining_passage_adds_nothing(self):
        builder = ContextBuilder()
        record = EvalRecord(
            "q", "w", (Passage("P1", "", "nothing here", "relevant"),),
            ("original",),
        )
        backend = ToyKeywordReader({"kwgold": "pseudoans"}, builder.vocab)
        out = pseudo_label(record, backend, builder=builder)
        assert out.gold_answers == ("original",)

    def test_no_relevant_passages_passes_through(self, caplog):
        builder = ContextBuilder()
        record = record_of(["p1", "p2"])
        backend = ToyKeywordReader({"kw": "a"}, builder.vocab)
        out = pseudo_label(record, backend, builder=builder)
        assert out == record

    def test_never_removes_relevance(self):
        builder = ContextBuilder()
        record = self.make_record()
        backend = ToyKeywordReader({"kwgold": "pseudoans"}, builder.vocab)
        out = pseudo_label(record, backend, builder=builder)
        before = sum(p.label == "relevant" for p in record.passages)
        after = sum(p.label == "relevant" for p in out.passages)
        assert after >= before


class GoldFirst(Backend):
    """Answers correctly only when the gold keyword is the first content
    word; a hard lost-in-the-middle caricature."""

    def __init__(self, vocab, keyword, answer):
        super().__init__()
        self.kw_id = vocab.add(keyword)
        self.result = answer

    def describe(self):
        return BackendDescriptor(reentrant=True)

    def _answer(self, x, s, mode):
        # position 0 is the separator, 1 the first content word
        if len(x) > 1 and x.tokens[1] == self.kw_id and 1 in s.positions:
            return self.result
        return "unknown"


class TestPositionSweep:
    def sweep_record(self):
        return EvalRecord(
            "q", "w", (
                Passage("G", "", "goldkw trails", None),
                Passage("B1", "", "junk one", None),
                Passage("B2", "", "junk two", None),
            ), ("rightans",),
        )

    def test_position_insensitive_curve_is_flat(self):
        builder = ContextBuilder()
        record = self.sweep_record()
        backend = VotingKeywordReader({"goldkw": "rightans"}, builder.vocab)
        curve = position_sweep(record, backend, "G", builder=builder)
        assert curve == (1.0, 1.0, 1.0)

    def test_first_slot_backend(self):
        builder = ContextBuilder()
        record = self.sweep_record()
        backend = GoldFirst(builder.vocab, "goldkw", "rightans")
        curve = position_sweep(record, backend, "G", builder=builder)
        assert curve == (1.0, 0.0, 0.0)

    def test_single_passage(self):
        builder = ContextBuilder()
        record = EvalRecord(
            "q", "w", (Passage("G", "", "goldkw trails", None),), ("rightans",)
        )
        backend = VotingKeywordReader({"goldkw": "rightans"}, builder.vocab)
        assert position_sweep(record, backend, "G", builder=builder) == (1.0,)

    def test_unknown_gold_id(self):
        builder = ContextBuilder()
        backend = VotingKeywordReader({"goldkw": "rightans"}, builder.vocab)
        with pytest.raises(KeyError):
            position_sweep(self.sweep_record(), backend, "NOPE", builder=builder)


class TestBenchmark:
    def test_gold_planted_twice_in_relevant_passage(self, small_benchmark):
        for record in small_benchmark.records:
            relevant = [p for p in record.passages if p.label == "relevant"]
            assert len(relevant) == 1
            gold = record.gold_answers[0]
            assert relevant[0].text.split().count(gold) == 2

    def test_decoys_do_not_touch_relevant_passage(self, small_benchmark):
        for record in small_benchmark.records:
            relevant = next(p for p in record.passages if p.label == "relevant")
            decoys = {
                w for p in record.passages if p.label != "relevant"
                for w in p.text.split() if w.startswith("ans")
            }
            assert not decoys & set(relevant.text.split())

    def test_keywords_map_gold_to_itself(self, small_benchmark):
        for record in small_benchmark.records:
            gold = record.gold_answers[0]
            assert small_benchmark.keywords[gold] == gold

    def test_relevant_rank_varies(self, small_benchmark):
        ranks = {
            next(
                i for i, p in enumerate(record.passages)
                if p.label == "relevant"
            )
            for record in small_benchmark.records
        }
        assert len(ranks) > 1


class TestAttributionJson:
    def test_deterministic_shape(self):
        t = table_of({"p2": {"b": 1}, "p1": {"a": 2, "c": 1}}, 4)
        doc = attribution_to_json(t)
        assert doc["sample_count"] == 4
        assert doc["feature_ids"] == ["p2", "p1"]
        assert doc["counts"]["p1"] == {"a": 2, "c": 1}
