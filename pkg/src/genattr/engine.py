"""Flat coalitional samplers and their exact enumeration oracles.

The estimators here implement the counting rule: walk feature coalitions,
and whenever the generated answer changes, credit one unit of mass to the
feature that was just unmasked, keyed by the new answer. Expectations over
random walks are estimated by Monte Carlo; the oracles compute the same
quantities by exhaustive enumeration so the samplers can be checked cell by
cell.

Three sampling routes are provided: permutation walks (uniform orders),
Bernoulli paired flips (the power-index route), and paired flips under the
size-biased subset law whose per-size weight is `shapley_weight`. All mass
is integer counts over `sample_count` trials; see core.AttributionTable.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from .core import (
    AttributionTable,
    Feature,
    FeatureId,
    Mask,
    TokenSeq,
    check_features,
)
from .exceptions import SamplingError
from .models.base import Backend, EncodingSession, score_answer
from .rngs import path_rng
from .textnorm import normalize_answer

BASELINE_MODES = ("evaluate_empty", "literal_blank")


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs shared by every sampling route.

    num_paths is the number of permutation walks or flip rounds; bernoulli_p
    only matters to the Bernoulli route; baseline_mode picks between
    evaluating the empty coalition (one extra model call, memoized) and
    starting each walk from a literal blank running answer.
    """

    num_paths: int = 100
    seed: int = 0
    bernoulli_p: float = 0.5
    baseline_mode: str = "evaluate_empty"

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("num_paths must be at least 1")
        if not 0 < self.bernoulli_p < 1:
            raise ValueError("bernoulli_p must lie strictly between 0 and 1")
        if self.baseline_mode not in BASELINE_MODES:
            raise ValueError(
                f"baseline_mode must be one of {BASELINE_MODES}, "
                f"got {self.baseline_mode!r}"
            )


# ---------------------------------------------------------------------------
# subset weights
# ---------------------------------------------------------------------------


def shapley_weight(d: int, k: int) -> Fraction:
    """Unnormalized weight of one size-k subset out of d features:
    (d-1) / (C(d,k) * k * (d-k))."""
    if d < 2:
        raise ValueError("subset weights need at least 2 features")
    if not 1 <= k <= d - 1:
        raise ValueError(f"subset size {k} outside [1, {d - 1}]")
    return Fraction(d - 1, math.comb(d, k) * k * (d - k))


@dataclass(frozen=True)
class ShapleyWeightTable:
    """Per-size subset probabilities, normalized so that summing weight(k)
    over all C(d,k) subsets of every admissible size gives exactly 1."""

    d: int
    weights: Mapping[int, Fraction]

    @classmethod
    def build(cls, d: int) -> "ShapleyWeightTable":
        raw = {k: shapley_weight(d, k) for k in range(1, d)}
        z = sum((math.comb(d, k) * w for k, w in raw.items()), Fraction(0))
        return cls(d, {k: w / z for k, w in raw.items()})

    def size_probabilities(self) -> dict[int, Fraction]:
        """Probability that a drawn subset has size k."""
        return {k: math.comb(self.d, k) * w for k, w in self.weights.items()}


# ---------------------------------------------------------------------------
# evaluation plumbing
# ---------------------------------------------------------------------------


class _EvalCounter:
    __slots__ = ("count",)

    def __init__(self):
        self.count = 0


def position_evaluator(
    backend: Backend,
    x: TokenSeq,
    mode: str,
    cache=None,
    lock: threading.Lock | None = None,
) -> tuple[Callable[[frozenset[int]], str], _EvalCounter]:
    """Bind a backend to `x`: visible position set -> normalized answer.

    With `cache` (a spectree.SpecTree) the call goes through the speculative
    decoder instead of plain generation; answers are identical either way.
    The returned counter tallies evaluations, one per call.
    """
    counter = _EvalCounter()
    d = len(x)
    norm_cache: dict[str, str] = {}

    def norm(raw: str) -> str:
        out = norm_cache.get(raw)
        if out is None:
            out = normalize_answer(raw)
            norm_cache[raw] = out
        return out

    if cache is not None:
        from .spectree import speculate_or_decode

        def evaluate(visible: frozenset[int]) -> str:
            counter.count += 1
            s = Mask(d, visible)
            if lock is not None:
                with lock:
                    result, _ = speculate_or_decode(cache, backend, x, s, mode)
            else:
                result, _ = speculate_or_decode(cache, backend, x, s, mode)
            return norm(result.answer)

    else:
        generate = backend.generate

        def evaluate(visible: frozenset[int]) -> str:
            counter.count += 1
            return norm(generate(x, Mask(d, visible), mode).answer)

    return evaluate, counter


def _coalition_evaluator(
    backend: Backend,
    x: TokenSeq,
    features: Sequence[Feature],
    mode: str,
    cache,
    session: EncodingSession | None,
    lock: threading.Lock | None = None,
) -> tuple[Callable[[frozenset[int]], str], _EvalCounter]:
    """Coalitions of feature indices -> normalized answer.

    Positions outside every feature stay visible in every evaluation. When a
    document session is supplied the features must be exactly its documents
    and masking must be drop-mode; subset generation then skips re-encoding.
    """
    if session is not None:
        if mode != "drop":
            raise ValueError("document sessions imply drop-mode masking")
        fids = [fid for fid, _ in features]
        if set(fids) != set(session.doc_ids):
            raise ValueError("features do not match the session's documents")
        counter = _EvalCounter()

        def evaluate(coalition: frozenset[int]) -> str:
            counter.count += 1
            active = [fids[i] for i in sorted(coalition)]
            return normalize_answer(session.generate_with_doc_subset(active).answer)

        return evaluate, counter

    base_eval, counter = position_evaluator(backend, x, mode, cache, lock)
    position_sets = [frozenset(pos) for _, pos in features]
    claimed = frozenset().union(*position_sets) if position_sets else frozenset()
    fixed = frozenset(range(len(x))) - claimed

    def evaluate(coalition: frozenset[int]) -> str:
        visible = set(fixed)
        for i in coalition:
            visible |= position_sets[i]
        return base_eval(frozenset(visible))

    return evaluate, counter


def _telescope_check(
    into: Mapping[str, int],
    out_of: Mapping[str, int],
    baseline: str,
    final: str,
    path_index: int,
) -> None:
    # Per path and answer y: changes into y minus changes out of y must equal
    # [final == y] - [baseline == y]. Fails only if the backend answered the
    # same coalition two different ways mid-path.
    for y in set(into) | set(out_of) | {baseline, final}:
        lhs = into.get(y, 0) - out_of.get(y, 0)
        rhs = (1 if final == y else 0) - (1 if baseline == y else 0)
        if lhs != rhs:
            raise SamplingError(
                f"telescoping identity violated for answer {y!r} on path "
                f"{path_index}; backend is not deterministic",
                path_index=path_index,
            )


def _counting_path(
    order: Sequence[int],
    evaluate: Callable[[frozenset[int]], str],
    baseline: str,
    fids: Sequence[FeatureId],
    counts: dict[FeatureId, dict[str, int]],
    path_index: int,
) -> None:
    """One permutation walk of the counting rule, crediting `counts`."""
    text_curr = baseline
    coalition: set[int] = set()
    into: dict[str, int] = {}
    out_of: dict[str, int] = {}
    try:
        for i in order:
            coalition.add(i)
            answer = evaluate(frozenset(coalition))
            if answer != text_curr:
                row = counts.setdefault(fids[i], {})
                row[answer] = row.get(answer, 0) + 1
                into[answer] = into.get(answer, 0) + 1
                out_of[text_curr] = out_of.get(text_curr, 0) + 1
                text_curr = answer
    except SamplingError:
        raise
    except Exception as exc:
        raise SamplingError(
            f"backend failed on path {path_index}: {exc}", path_index=path_index
        ) from exc
    _telescope_check(into, out_of, baseline, text_curr, path_index)


def _resolve_baseline(
    cfg: SamplerConfig, evaluate: Callable[[frozenset[int]], str]
) -> str:
    if cfg.baseline_mode == "evaluate_empty":
        return evaluate(frozenset())
    return ""


# ---------------------------------------------------------------------------
# sampling estimators
# ---------------------------------------------------------------------------


def permutation_shapley(
    backend: Backend,
    x: TokenSeq,
    features: Sequence[Feature],
    cfg: SamplerConfig | None = None,
    *,
    mode: str = "pad",
    cache=None,
    session: EncodingSession | None = None,
    workers: int = 1,
) -> AttributionTable:
    """Counting-rule attribution over uniformly random permutation walks.

    Exactly num_paths * n evaluations are spent on walks plus one memoized
    baseline evaluation under evaluate_empty; the total is asserted. Paths
    draw from per-index random streams, so the table is bit-identical for a
    given config no matter how many workers share the walk.
    """
    cfg = cfg or SamplerConfig()
    check_features(features, len(x))
    n = len(features)
    if n == 0:
        raise ValueError("no features to attribute")
    fids = [fid for fid, _ in features]
    lock = threading.Lock() if (workers > 1 and cache is not None) else None
    evaluate, counter = _coalition_evaluator(
        backend, x, features, mode, cache, session, lock
    )
    baseline = _resolve_baseline(cfg, evaluate)

    counts: dict[FeatureId, dict[str, int]] = {}

    def run_block(path_indices: range, block_eval) -> dict[FeatureId, dict[str, int]]:
        local: dict[FeatureId, dict[str, int]] = {}
        for t in path_indices:
            order = path_rng(cfg.seed, t).permutation(n).tolist()
            _counting_path(order, block_eval, baseline, fids, local, t)
        return local

    if workers <= 1:
        counts = run_block(range(cfg.num_paths), evaluate)
    else:
        counts = _parallel_blocks(
            backend, x, features, mode, cache, session, cfg, run_block, workers, lock
        )

    expected = cfg.num_paths * n + (1 if cfg.baseline_mode == "evaluate_empty" else 0)
    if workers <= 1 and counter.count != expected:
        raise SamplingError(
            f"evaluation accounting drifted: spent {counter.count}, "
            f"expected {expected}"
        )
    return AttributionTable.from_counts(fids, counts, cfg.num_paths)


def _parallel_blocks(
    backend, x, features, mode, cache, session, cfg, run_block, workers, lock
):
    """Split paths into contiguous blocks, one private accumulator each, and
    merge. Non-reentrant backends are forked per worker and their call stats
    folded back afterwards."""
    from concurrent.futures import ThreadPoolExecutor

    blocks: list[range] = []
    per = -(-cfg.num_paths // workers)
    for w in range(workers):
        lo, hi = w * per, min((w + 1) * per, cfg.num_paths)
        if lo < hi:
            blocks.append(range(lo, hi))

    def worker(block: range) -> dict:
        fork = backend.fork()
        ev, _ = _coalition_evaluator(fork, x, features, mode, cache, session, lock)
        local = run_block(block, ev)
        if fork is not backend:
            backend.stats.add(fork.stats)
        return local

    merged: dict[FeatureId, dict[str, int]] = {}
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        for local in pool.map(worker, blocks):
            for fid, row in local.items():
                slot = merged.setdefault(fid, {})
                for answer, c in row.items():
                    slot[answer] = slot.get(answer, 0) + c
    return merged


def _paired_flip_rounds(
    backend: Backend,
    x: TokenSeq,
    features: Sequence[Feature],
    cfg: SamplerConfig,
    draw_base: Callable,
    mode: str,
    cache,
    session: EncodingSession | None,
) -> AttributionTable:
    """Shared protocol for the Bernoulli and size-biased subset routes.

    Each round draws one base coalition, then flips every feature in and out
    against it. Mass lands on the flipped-in answer whenever the pair
    disagrees. Repeated coalitions inside a round are evaluated once.
    """
    check_features(features, len(x))
    n = len(features)
    if n == 0:
        raise ValueError("no features to attribute")
    fids = [fid for fid, _ in features]
    evaluate, _ = _coalition_evaluator(backend, x, features, mode, cache, session)

    counts: dict[FeatureId, dict[str, int]] = {}
    for r in range(cfg.num_paths):
        rng = path_rng(cfg.seed, r)
        base = draw_base(rng, n)
        memo: dict[frozenset[int], str] = {}

        def ev(coalition: frozenset[int]) -> str:
            ans = memo.get(coalition)
            if ans is None:
                ans = evaluate(coalition)
                memo[coalition] = ans
            return ans

        try:
            for i in range(n):
                with_i = ev(base | {i})
                without_i = ev(base - {i})
                if with_i != without_i:
                    row = counts.setdefault(fids[i], {})
                    row[with_i] = row.get(with_i, 0) + 1
        except Exception as exc:
            raise SamplingError(
                f"backend failed on round {r}: {exc}", path_index=r
            ) from exc
    return AttributionTable.from_counts(fids, counts, cfg.num_paths)


def banzhaf_estimate(
    backend: Backend,
    x: TokenSeq,
    features: Sequence[Feature],
    cfg: SamplerConfig | None = None,
    *,
    mode: str = "pad",
    cache=None,
    session: EncodingSession | None = None,
) -> AttributionTable:
    """Power-index attribution: base coalitions are Bernoulli(bernoulli_p)."""
    cfg = cfg or SamplerConfig()

    def draw(rng, n):
        return frozenset(int(i) for i in (rng.random(n) < cfg.bernoulli_p).nonzero()[0])

    return _paired_flip_rounds(backend, x, features, cfg, draw, mode, cache, session)


def shapley_subset_estimate(
    backend: Backend,
    x: TokenSeq,
    features: Sequence[Feature],
    cfg: SamplerConfig | None = None,
    *,
    mode: str = "pad",
    cache=None,
    session: EncodingSession | None = None,
) -> AttributionTable:
    """Paired flips with base subsets drawn by size from the normalized
    shapley_weight law, then uniformly within the size."""
    cfg = cfg or SamplerConfig()
    n = len(features)
    if n < 2:
        raise ValueError("the subset route needs at least 2 features")
    probs = ShapleyWeightTable.build(n).size_probabilities()
    sizes = sorted(probs)
    pvals = [float(probs[k]) for k in sizes]

    def draw(rng, n_feat):
        k = sizes[rng.choice(len(sizes), p=pvals)]
        return frozenset(int(i) for i in rng.choice(n_feat, size=k, replace=False))

    return _paired_flip_rounds(backend, x, features, cfg, draw, mode, cache, session)


def permutation_shapley_logprob(
    backend: Backend,
    x: TokenSeq,
    features: Sequence[Feature],
    target_answer: str,
    cfg: SamplerConfig | None = None,
    *,
    mode: str = "pad",
) -> dict[FeatureId, float]:
    """Scalar permutation Shapley on the log-probability of a fixed answer.

    The game value of a coalition is the target's log-probability under that
    coalition's mask; each walk telescopes, so one evaluation per step
    suffices. Returns per-feature means over num_paths walks.
    """
    cfg = cfg or SamplerConfig()
    check_features(features, len(x))
    n = len(features)
    if n == 0:
        raise ValueError("no features to attribute")
    fids = [fid for fid, _ in features]
    position_sets = [frozenset(pos) for _, pos in features]
    fixed = frozenset(range(len(x))) - (
        frozenset().union(*position_sets) if position_sets else frozenset()
    )

    memo: dict[frozenset[int], float] = {}

    def value(coalition: frozenset[int]) -> float:
        v = memo.get(coalition)
        if v is None:
            visible = set(fixed)
            for i in coalition:
                visible |= position_sets[i]
            s = Mask(len(x), frozenset(visible))
            v = score_answer(backend, x, s, target_answer, mode)
            memo[coalition] = v
        return v

    totals = {fid: 0.0 for fid in fids}
    v_empty = value(frozenset())
    for t in range(cfg.num_paths):
        order = path_rng(cfg.seed, t).permutation(n).tolist()
        coalition: set[int] = set()
        v_prev = v_empty
        # memoization only ever reuses the empty-coalition score across paths;
        # walks themselves evaluate fresh coalitions step by step
        memo.clear()
        memo[frozenset()] = v_empty
        try:
            for i in order:
                coalition.add(i)
                v_curr = value(frozenset(coalition))
                totals[fids[i]] += v_curr - v_prev
                v_prev = v_curr
        except Exception as exc:
            raise SamplingError(
                f"backend failed on path {t}: {exc}", path_index=t
            ) from exc
    return {fid: total / cfg.num_paths for fid, total in totals.items()}


# ---------------------------------------------------------------------------
# exact oracles
# ---------------------------------------------------------------------------

ORACLE_MAX_PERMUTATION = 8
ORACLE_MAX_SUBSET = 16


def exact_shapley_oracle(
    backend: Backend,
    x: TokenSeq,
    features: Sequence[Feature],
    *,
    mode: str = "pad",
    baseline_mode: str = "evaluate_empty",
) -> AttributionTable:
    """Counting-rule attribution by enumerating all n! permutations.

    sample_count is n!, so table masses are exact rationals. Coalition
    evaluations are memoized across permutations (2^n distinct), which does
    not change any mass, only the model-call bill.
    """
    check_features(features, len(x))
    n = len(features)
    if n == 0:
        raise ValueError("no features to attribute")
    if n > ORACLE_MAX_PERMUTATION:
        raise ValueError(
            f"permutation oracle is limited to {ORACLE_MAX_PERMUTATION} features"
        )
    if baseline_mode not in BASELINE_MODES:
        raise ValueError(f"unknown baseline mode {baseline_mode!r}")
    fids = [fid for fid, _ in features]
    evaluate, _ = _coalition_evaluator(backend, x, features, mode, None, None)

    memo: dict[frozenset[int], str] = {}

    def ev(coalition: frozenset[int]) -> str:
        ans = memo.get(coalition)
        if ans is None:
            ans = evaluate(coalition)
            memo[coalition] = ans
        return ans

    baseline = ev(frozenset()) if baseline_mode == "evaluate_empty" else ""
    counts: dict[FeatureId, dict[str, int]] = {}
    for path_index, order in enumerate(itertools.permutations(range(n))):
        _counting_path(order, ev, baseline, fids, counts, path_index)
    return AttributionTable.from_counts(fids, counts, math.factorial(n))


def exact_banzhaf_oracle(
    backend: Backend,
    x: TokenSeq,
    features: Sequence[Feature],
    p: float | Fraction = Fraction(1, 2),
    *,
    mode: str = "pad",
) -> AttributionTable:
    """Exact paired-flip attribution over all 2^n Bernoulli(p) coalitions.

    With p = a/b, the weight of a base coalition B is a^|B| (b-a)^(n-|B|)
    over the divisor b^n, so the table stays in exact integer counts.
    """
    check_features(features, len(x))
    n = len(features)
    if n == 0:
        raise ValueError("no features to attribute")
    if n > ORACLE_MAX_SUBSET:
        raise ValueError(f"subset oracle is limited to {ORACLE_MAX_SUBSET} features")
    frac = p if isinstance(p, Fraction) else Fraction(str(p))
    if not 0 < frac < 1:
        raise ValueError("p must lie strictly between 0 and 1")
    a, b = frac.numerator, frac.denominator
    fids = [fid for fid, _ in features]
    evaluate, _ = _coalition_evaluator(backend, x, features, mode, None, None)

    memo: dict[frozenset[int], str] = {}

    def ev(coalition: frozenset[int]) -> str:
        ans = memo.get(coalition)
        if ans is None:
            ans = evaluate(coalition)
            memo[coalition] = ans
        return ans

    counts: dict[FeatureId, dict[str, int]] = {}
    universe = list(range(n))
    for size in range(n + 1):
        for combo in itertools.combinations(universe, size):
            base = frozenset(combo)
            weight = a ** len(base) * (b - a) ** (n - len(base))
            for i in universe:
                with_i = ev(base | {i})
                without_i = ev(base - {i})
                if with_i != without_i:
                    row = counts.setdefault(fids[i], {})
                    row[with_i] = row.get(with_i, 0) + weight
    return AttributionTable.from_counts(fids, counts, b**n)
