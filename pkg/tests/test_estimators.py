"""Estimator wrappers: parameter plumbing, clone compatibility, and
equality with the underlying sampling routines."""

import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from genattr.engine import (
    SamplerConfig,
    banzhaf_estimate,
    permutation_shapley,
    permutation_shapley_logprob,
)
from genattr.estimators import (
    AttributionReranker,
    BanzhafExplainer,
    HierarchicalShapleyExplainer,
    LogProbShapleyExplainer,
    PermutationShapleyExplainer,
)
from genattr.games import build_game
from genattr.harness import ContextBuilder, context_hierarchy
from genattr.models.toys import ScalarGameBackend, ToyKeywordReader


def fitted_pair(cls=PermutationShapleyExplainer, **kw):
    g = build_game("three_docs")
    est = cls(backend=g.backend, num_paths=50, seed=7, mode=g.mode, **kw)
    est.fit((g.x, g.features))
    return g, est


class TestSklearnPlumbing:
    def test_get_params_round_trip(self):
        est = PermutationShapleyExplainer(num_paths=9, seed=3)
        params = est.get_params()
        assert params["num_paths"] == 9
        assert params["seed"] == 3
        est.set_params(num_paths=11)
        assert est.get_params()["num_paths"] == 11

    def test_clone_preserves_params(self):
        g = build_game("three_docs")
        est = PermutationShapleyExplainer(
            backend=g.backend, num_paths=12, seed=5
        )
        twin = clone(est)
        ours, theirs = est.get_params(), twin.get_params()
        # the backend is deep-copied by clone; everything else must match
        assert type(theirs.pop("backend")) is type(ours.pop("backend"))
        assert theirs == ours

    def test_unfitted_access_raises(self):
        est = PermutationShapleyExplainer()
        with pytest.raises(NotFittedError):
            _ = est.attribution

    def test_missing_backend_rejected_at_fit(self):
        g = build_game("three_docs")
        est = PermutationShapleyExplainer(num_paths=5)
        with pytest.raises(ValueError):
            est.fit((g.x, g.features))


class TestExplainersMatchEngine:
    def test_permutation_explainer(self):
        g, est = fitted_pair()
        direct = permutation_shapley(
            g.backend, g.x, g.features,
            SamplerConfig(num_paths=50, seed=7), mode=g.mode,
        )
        for fid in direct.feature_ids:
            assert est.attribution_.counts_of(fid) == direct.counts_of(fid)

    def test_banzhaf_explainer(self):
        g, est = fitted_pair(BanzhafExplainer, bernoulli_p=0.3)
        direct = banzhaf_estimate(
            g.backend, g.x, g.features,
            SamplerConfig(num_paths=50, seed=7, bernoulli_p=0.3), mode=g.mode,
        )
        for fid in direct.feature_ids:
            assert est.attribution_.counts_of(fid) == direct.counts_of(fid)

    def test_call_stats_recorded(self):
        _, est = fitted_pair()
        assert est.call_stats_.decoder_calls == 50 * 3 + 1

    def test_logprob_explainer(self):
        values = {
            frozenset(): -2.0, frozenset({0}): -0.5,
            frozenset({1}): -2.0, frozenset({0, 1}): -0.5,
        }
        backend = ScalarGameBackend("t", lambda pos: values[frozenset(pos)])
        from genattr.core import TokenSeq

        x = TokenSeq((2, 3), vocab_size=10, pad_id=1)
        feats = [("f0", (0,)), ("f1", (1,))]
        est = LogProbShapleyExplainer(
            backend=backend, target_answer="t", num_paths=32, seed=0
        )
        est.fit((x, feats))
        direct = permutation_shapley_logprob(
            backend, x, feats, "t", SamplerConfig(num_paths=32, seed=0)
        )
        assert est.scores_ == direct


class TestHierarchicalExplainer:
    def test_fit_on_built_context(self, small_benchmark):
        record = small_benchmark.records[0]
        builder = small_benchmark.builder
        backend = ToyKeywordReader(small_benchmark.keywords, builder.vocab)
        est = HierarchicalShapleyExplainer(
            backend=backend, num_paths=20, seed=1, thresholds=0.1
        )
        est.fit(builder.context(record))
        assert est.levels_ == (1, 2)
        assert set(est.table(1).feature_ids) == set(record.passage_ids)

    def test_explicit_hierarchy_tuple(self):
        g = build_game("three_docs")
        from genattr.core import HierarchyNode, HierarchySpec

        nodes = tuple(
            HierarchyNode(fid, "document", tuple(pos))
            for fid, pos in g.features
        )
        h = HierarchySpec(
            nodes, tuple(fid for fid, _ in g.features), num_tokens=len(g.x)
        )
        est = HierarchicalShapleyExplainer(
            backend=g.backend, num_paths=16, seed=0
        )
        est.fit((g.x, h))
        assert est.levels_ == (1,)


class TestReranker:
    def test_transform_reproducible_across_batch_orders(self, small_benchmark):
        records = list(small_benchmark.records[:6])
        builder = small_benchmark.builder

        def rank(batch):
            backend = ToyKeywordReader(small_benchmark.keywords, builder.vocab)
            rr = AttributionReranker(
                backend=backend, builder=builder, num_paths=30, seed=5
            )
            rr.fit(batch)
            return {
                r.query_id: ranking.ids
                for r, ranking in zip(batch, rr.transform(batch))
            }

        forward = rank(records)
        backward = rank(records[::-1])
        assert forward == backward

    def test_transform_before_fit_raises(self, small_benchmark):
        rr = AttributionReranker()
        with pytest.raises(NotFittedError):
            rr.transform(list(small_benchmark.records[:2]))
