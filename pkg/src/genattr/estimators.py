"""Estimator wrappers with the scikit-learn calling convention.

The functional samplers stay the source of truth; these classes only carry
hyperparameters through `get_params`/`set_params`, validate inputs, run one
sampler in `fit`, and expose results as fitted attributes. That makes the
attribution pipeline scriptable with the usual sklearn tooling (grid search
over path budgets, cloning per record, and so on).

`fit` accepts either a BuiltContext or an explicit `(x, features)` pair; a
bare TokenSeq falls back to one-feature-per-token.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import TokenSeq, check_features, token_features
from .engine import (
    SamplerConfig,
    banzhaf_estimate,
    permutation_shapley,
    permutation_shapley_logprob,
    shapley_subset_estimate,
)
from .harness import BuiltContext, ContextBuilder, context_hierarchy, rerank_by_attribution
from .hierarchy import hierarchical_shapley
from .models.base import Backend
from .rngs import derive_seed
from .spectree import SpecTree


def unpack_context(X, features=None):
    """Normalize estimator input to `(x, features)`.

    Accepts a BuiltContext, an `(x, features)` tuple, or a TokenSeq (token
    granularity). Explicit `features` override whatever X carries.
    """
    if isinstance(X, BuiltContext):
        x, feats = X.x, X.features
    elif isinstance(X, TokenSeq):
        x, feats = X, None
    elif isinstance(X, tuple) and len(X) == 2 and isinstance(X[0], TokenSeq):
        x, feats = X
    else:
        raise TypeError(
            "X must be a BuiltContext, a TokenSeq, or an (x, features) tuple"
        )
    if features is not None:
        feats = features
    if feats is None:
        feats = token_features(x)
    feats = tuple(feats)
    check_features(feats, len(x))
    return x, feats


def _require_backend(backend) -> Backend:
    if not isinstance(backend, Backend):
        raise ValueError("a Backend instance is required; got %r" % (backend,))
    return backend


class _SamplingExplainer(BaseEstimator):
    """Shared plumbing: config assembly, cache wiring, stats bookkeeping."""

    def __init__(self, backend=None, *, num_paths=100, seed=0,
                 baseline_mode="evaluate_empty", mode="pad",
                 use_cache=False, workers=1):
        self.backend = backend
        self.num_paths = num_paths
        self.seed = seed
        self.baseline_mode = baseline_mode
        self.mode = mode
        self.use_cache = use_cache
        self.workers = workers

    def _config(self, **overrides) -> SamplerConfig:
        base = dict(
            num_paths=self.num_paths,
            seed=self.seed,
            baseline_mode=self.baseline_mode,
        )
        base.update(overrides)
        return SamplerConfig(**base)

    def _run(self, x, features):  # pragma: no cover - subclasses implement
        raise NotImplementedError

    def fit(self, X, y=None, *, features=None):
        backend = _require_backend(self.backend)
        x, feats = unpack_context(X, features)
        before = backend.stats.snapshot()
        self.cache_ = SpecTree() if self.use_cache else None
        self.attribution_ = self._run(backend, x, feats)
        self.call_stats_ = backend.stats.since(before)
        self.feature_ids_ = self.attribution_.feature_ids
        return self

    @property
    def attribution(self):
        check_is_fitted(self, "attribution_")
        return self.attribution_


class PermutationShapleyExplainer(_SamplingExplainer):
    """Permutation-walk attribution over the given features."""

    def _run(self, backend, x, features):
        return permutation_shapley(
            backend, x, features, self._config(),
            mode=self.mode, cache=self.cache_, workers=self.workers,
        )


class BanzhafExplainer(_SamplingExplainer):
    """Paired-flip attribution with a Bernoulli(p) base coalition."""

    def __init__(self, backend=None, *, num_paths=100, seed=0,
                 bernoulli_p=0.5, baseline_mode="evaluate_empty", mode="pad",
                 use_cache=False, workers=1):
        super().__init__(backend, num_paths=num_paths, seed=seed,
                         baseline_mode=baseline_mode, mode=mode,
                         use_cache=use_cache, workers=workers)
        self.bernoulli_p = bernoulli_p

    def _run(self, backend, x, features):
        return banzhaf_estimate(
            backend, x, features, self._config(bernoulli_p=self.bernoulli_p),
            mode=self.mode,
        )


class SubsetShapleyExplainer(_SamplingExplainer):
    """Paired-flip protocol with base coalitions drawn from the exact
    permutation-weight law over sizes; a drop-in alternative estimator."""

    def _run(self, backend, x, features):
        return shapley_subset_estimate(
            backend, x, features, self._config(), mode=self.mode,
        )


class LogProbShapleyExplainer(_SamplingExplainer):
    """Scalar attribution of a fixed target answer's log-probability."""

    def __init__(self, backend=None, *, target_answer=None, num_paths=100,
                 seed=0, baseline_mode="evaluate_empty", mode="pad",
                 use_cache=False, workers=1):
        super().__init__(backend, num_paths=num_paths, seed=seed,
                         baseline_mode=baseline_mode, mode=mode,
                         use_cache=use_cache, workers=workers)
        self.target_answer = target_answer

    def fit(self, X, y=None, *, features=None):
        backend = _require_backend(self.backend)
        if not self.target_answer:
            raise ValueError("target_answer is required")
        x, feats = unpack_context(X, features)
        before = backend.stats.snapshot()
        self.scores_ = permutation_shapley_logprob(
            backend, x, feats, self.target_answer, self._config(), mode=self.mode,
        )
        self.call_stats_ = backend.stats.since(before)
        self.feature_ids_ = tuple(self.scores_)
        return self


class HierarchicalShapleyExplainer(BaseEstimator):
    """Multi-level refinement over a passage/sentence/word hierarchy.

    X may be `(x, hierarchy)` or a BuiltContext, in which case the two- or
    three-level tree is derived on the fly (`sentences` picks the depth).
    """

    def __init__(self, backend=None, *, num_paths=100, refine_paths=None,
                 seed=0, thresholds=0.1, max_levels=None, sentences=False,
                 baseline_mode="evaluate_empty", mode="pad", use_cache=False):
        self.backend = backend
        self.num_paths = num_paths
        self.refine_paths = refine_paths
        self.seed = seed
        self.thresholds = thresholds
        self.max_levels = max_levels
        self.sentences = sentences
        self.baseline_mode = baseline_mode
        self.mode = mode
        self.use_cache = use_cache

    def fit(self, X, y=None):
        backend = _require_backend(self.backend)
        if isinstance(X, BuiltContext):
            x, h = X.x, context_hierarchy(X, sentences=self.sentences)
        elif isinstance(X, tuple) and len(X) == 2:
            x, h = X
        else:
            raise TypeError("X must be a BuiltContext or an (x, hierarchy) tuple")
        cfg = SamplerConfig(
            num_paths=self.num_paths, seed=self.seed,
            baseline_mode=self.baseline_mode,
        )
        before = backend.stats.snapshot()
        self.cache_ = SpecTree() if self.use_cache else None
        self.result_ = hierarchical_shapley(
            backend, x, h, cfg,
            thresholds=self.thresholds, max_levels=self.max_levels,
            refine_paths=self.refine_paths, mode=self.mode, cache=self.cache_,
        )
        self.call_stats_ = backend.stats.since(before)
        self.levels_ = self.result_.levels
        return self

    def table(self, level: int):
        check_is_fitted(self, "result_")
        return self.result_.table(level)


class AttributionReranker(TransformerMixin, BaseEstimator):
    """Record transformer: attribution-scored passage rankings.

    Stateless between records; each record gets its own derived seed so a
    transform is reproducible record by record regardless of batch order.
    """

    def __init__(self, backend=None, *, builder=None, num_paths=100, seed=0,
                 baseline_mode="evaluate_empty", mode="pad", use_cache=False,
                 workers=1):
        self.backend = backend
        self.builder = builder
        self.num_paths = num_paths
        self.seed = seed
        self.baseline_mode = baseline_mode
        self.mode = mode
        self.use_cache = use_cache
        self.workers = workers

    def fit(self, X=None, y=None):
        _require_backend(self.backend)
        self.fitted_ = True
        return self

    def transform(self, records):
        check_is_fitted(self, "fitted_")
        backend = _require_backend(self.backend)
        builder = self.builder if self.builder is not None else ContextBuilder()
        rankings = []
        for record in records:
            ctx = builder.context(record)
            cfg = SamplerConfig(
                num_paths=self.num_paths,
                seed=derive_seed(self.seed, "rerank", record.query_id),
                baseline_mode=self.baseline_mode,
            )
            cache = SpecTree() if self.use_cache else None
            table = permutation_shapley(
                backend, ctx.x, ctx.features, cfg,
                mode=self.mode, cache=cache, workers=self.workers,
            )
            rankings.append(rerank_by_attribution(record, table))
        return rankings
