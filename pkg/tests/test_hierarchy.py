"""Coarse-to-fine refinement: selection, locality, call dominance, and
equivalence with flat sampling in the degenerate one-level case."""

from fractions import Fraction

import pytest

from genattr.core import (
    AttributionTable,
    HierarchyNode,
    HierarchySpec,
    node_features,
)
from genattr.engine import SamplerConfig, permutation_shapley
from genattr.hierarchy import hierarchical_shapley, select_important
from genattr.models.toys import ToyKeywordReader, Vocabulary


def toy():
    """Two 2-token docs; the first token of the first doc is the only
    keyword. Every refined path credits exactly that token, so refined
    masses are exact at any path budget."""
    vocab = Vocabulary()
    x = vocab.encode(("kw", "filler", "junk1", "junk2"))
    nodes = (
        HierarchyNode("d1", "document", (0, 1), children=("d1.w0", "d1.w1")),
        HierarchyNode("d1.w0", "word", (0,)),
        HierarchyNode("d1.w1", "word", (1,)),
        HierarchyNode("d2", "document", (2, 3), children=("d2.w0", "d2.w1")),
        HierarchyNode("d2.w0", "word", (2,)),
        HierarchyNode("d2.w1", "word", (3,)),
    )
    h = HierarchySpec(nodes, ("d1", "d2"), num_tokens=4)
    backend = ToyKeywordReader({"kw": "a"}, vocab, doc_spans=[(0, 2), (2, 4)])
    return backend, x, h


class TestRefinement:
    def test_keyword_token_gets_all_mass(self):
        backend, x, h = toy()
        res = hierarchical_shapley(
            backend, x, h, SamplerConfig(num_paths=32, seed=0), thresholds=0.25
        )
        assert res.important(1) == frozenset({"d1"})
        t2 = res.table(2)
        assert t2.mass("d1.w0", "a") == Fraction(1)
        assert t2.counts_of("d1.w1") == {}
        assert "d2.w0" not in t2.feature_ids

    def test_threshold_above_max_stops_refinement(self):
        backend, x, h = toy()
        res = hierarchical_shapley(
            backend, x, h, SamplerConfig(num_paths=16, seed=0), thresholds=1.1
        )
        assert res.important(1) == frozenset()
        assert res.table(2).feature_ids == ()
        assert res.table(2).sample_count == 0

    def test_zero_threshold_refines_every_doc_at_flat_cost(self):
        backend, x, h = toy()
        T = 16
        before = backend.stats.snapshot()
        res = hierarchical_shapley(
            backend, x, h, SamplerConfig(num_paths=T, seed=0), thresholds=0.0
        )
        used = backend.stats.since(before).decoder_calls
        assert res.important(1) == frozenset({"d1", "d2"})
        # coarse phase: (p + 1) per path; refined with every doc expanded:
        # (p - p) + d + 1 per path, the flat token-level cost exactly
        d, p = 4, 2
        assert used == T * (p + 1) + T * (d + 1)

    def test_call_dominance_formula(self):
        backend, x, h = toy()
        T = 24
        before = backend.stats.snapshot()
        res = hierarchical_shapley(
            backend, x, h, SamplerConfig(num_paths=T, seed=1), thresholds=0.25
        )
        used = backend.stats.since(before).decoder_calls
        q = len(res.important(1))
        kids = sum(len(h.children_of(n)) for n in res.important(1))
        per_refined = (2 - q) + kids + 1
        assert used == T * 3 + T * per_refined
        assert per_refined <= 4 + 1

    def test_refined_paths_knob(self):
        backend, x, h = toy()
        res = hierarchical_shapley(
            backend, x, h, SamplerConfig(num_paths=8, seed=0),
            thresholds=0.25, refine_paths=20,
        )
        assert res.table(1).sample_count == 8
        assert res.table(2).sample_count == 20

    def test_locality_outside_important_nodes(self):
        backend, x, h = toy()
        res = hierarchical_shapley(
            backend, x, h, SamplerConfig(num_paths=40, seed=2), thresholds=0.25
        )
        refined_ids = set(res.table(2).feature_ids)
        allowed = set(h.children_of("d1"))
        assert refined_ids <= allowed


class TestOneLevelEquivalence:
    def test_bit_identical_to_flat(self):
        backend, x, h_full = toy()
        docs_only = HierarchySpec(
            (
                HierarchyNode("d1", "document", (0, 1)),
                HierarchyNode("d2", "document", (2, 3)),
            ),
            ("d1", "d2"),
            num_tokens=4,
        )
        cfg = SamplerConfig(num_paths=64, seed=11)
        res = hierarchical_shapley(backend, x, docs_only, cfg)
        flat = permutation_shapley(
            backend, x, node_features(docs_only), cfg
        )
        coarse = res.table(1)
        assert coarse.sample_count == flat.sample_count
        for fid in flat.feature_ids:
            assert coarse.counts_of(fid) == flat.counts_of(fid)


class TestSelectImportant:
    def table(self):
        return AttributionTable.from_counts(
            ("d1", "d2"), {"d1": {"a": 4}, "d2": {"b": 2}}, 4
        )

    def test_moderate_threshold_keeps_both(self):
        assert select_important(self.table(), 0.3) == frozenset({"d1", "d2"})

    def test_high_threshold_keeps_top(self):
        assert select_important(self.table(), 0.75) == frozenset({"d1"})

    def test_zero_threshold_keeps_every_recorded_node(self):
        # zero-mass nodes still clear a zero threshold: tau=0 must refine
        # everything so the flat-cost upper bound stays reachable
        t = AttributionTable.from_counts(
            ("d1", "d2", "d3"), {"d1": {"a": 4}, "d2": {"b": 1}, "d3": {}}, 4
        )
        assert select_important(t, 0.0) == frozenset({"d1", "d2", "d3"})

    def test_abstention_mass_ignored_by_default(self):
        t = AttributionTable.from_counts(
            ("d1", "d2"), {"d1": {"unknown": 4}, "d2": {"b": 3}}, 4
        )
        assert select_important(t, 0.5) == frozenset({"d2"})
        assert select_important(t, 0.5, include_abstain=True) == frozenset(
            {"d1", "d2"}
        )

    def test_threshold_monotonicity(self):
        t = self.table()
        taus = [Fraction(i, 10) for i in range(11)]
        picks = [select_important(t, tau) for tau in taus]
        for narrower, wider in zip(picks[1:], picks):
            assert narrower <= wider

    def test_single_answer_selection(self):
        t = AttributionTable.from_counts(
            ("d1", "d2"), {"d1": {"a": 4}, "d2": {"b": 4}}, 4
        )
        assert select_important(t, 0.5, answer="a") == frozenset({"d1"})


class TestThreeTier:
    def test_sentence_level_between_docs_and_words(self):
        from genattr.harness import ContextBuilder, EvalRecord, Passage, context_hierarchy

        record = EvalRecord(
            "q", "which", (
                Passage("P1", "", "kw here . more words", None),
                Passage("P2", "", "nothing at all", None),
            ), ("a",),
        )
        builder = ContextBuilder()
        ctx = builder.context(record)
        h = context_hierarchy(ctx, sentences=True)
        assert h.num_levels == 3
        backend = ToyKeywordReader({"kw": "a"}, builder.vocab)
        res = hierarchical_shapley(
            backend, ctx.x, h, SamplerConfig(num_paths=24, seed=3),
            thresholds=0.25,
        )
        assert res.levels == (1, 2, 3)
        # the keyword's sentence, then its word, dominate their levels
        assert res.important(1) == frozenset({"P1"})
        sent = max(
            res.table(2).feature_ids,
            key=lambda fid: res.table(2).total_mass(fid, include_abstain=False),
        )
        assert sent in h.children_of("P1")
        word_table = res.table(3)
        top_word = max(
            word_table.feature_ids,
            key=lambda fid: word_table.total_mass(fid, include_abstain=False),
        )
        lo, _ = ctx.spans["P1"]
        kw_index = ctx.words.index("kw")
        assert word_table.total_mass(top_word, include_abstain=False) == 1
        assert h.node(top_word).positions == (kw_index,)
