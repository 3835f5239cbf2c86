"""Coarse-to-fine attribution over a token hierarchy.

One pass of the flat counting rule over whole documents is cheap; token
resolution is only worth paying for where the document mass says something
is happening. Each phase walks permutations of the current frontier,
expanding a node into a fresh inner permutation of its children exactly
when an earlier phase marked it important, and credits the answer change to
whichever node was just unmasked, at that node's own level.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import AttributionTable, FeatureId, HierarchySpec, TokenSeq
from .engine import SamplerConfig, position_evaluator, _EvalCounter
from .exceptions import SamplingError
from .rngs import path_rng
from .textnorm import ABSTAIN


@dataclass(frozen=True)
class HierarchicalResult:
    """Per-level tables plus the selections that shaped them.

    per_level[1] is the document table; per_level[k] for k > 1 is keyed only
    by children of the level-(k-1) important set, so zero mass outside the
    refined region is structural, not coincidental.
    """

    per_level: Mapping[int, AttributionTable]
    important_sets: Mapping[int, frozenset[str]]
    thresholds: Mapping[int, Fraction]

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(sorted(self.per_level))

    def table(self, level: int) -> AttributionTable:
        return self.per_level[level]

    def important(self, level: int) -> frozenset[str]:
        return self.important_sets.get(level, frozenset())


def as_threshold(tau: float | Fraction) -> Fraction:
    """Thresholds compare against exact rational masses, so decimal inputs
    are read as decimals: 0.1 means one tenth, not the nearest float."""
    if isinstance(tau, Fraction):
        return tau
    return Fraction(str(tau))


def select_important(
    table: AttributionTable,
    tau: float | Fraction,
    *,
    include_abstain: bool = False,
    answer: str | None = None,
) -> frozenset[str]:
    """Nodes whose normalized mass reaches `tau`.

    By default the criterion is total non-abstention mass; passing `answer`
    restricts it to that answer's mass alone (e.g. the full-context answer).
    """
    threshold = as_threshold(tau)
    selected = []
    for fid in table.feature_ids:
        if answer is not None:
            m = table.mass(fid, answer)
        else:
            m = table.total_mass(fid, include_abstain=include_abstain)
        if m >= threshold:
            selected.append(fid)
    return frozenset(selected)


class _Trajectory:
    """State of one walk: the running visible set, answer, and credits."""

    __slots__ = ("baseline", "visible", "text_curr", "into", "out_of", "credits")

    def __init__(self, baseline: str):
        self.baseline = baseline
        self.visible: set[int] = set()
        self.text_curr = baseline
        self.into: dict[str, int] = {}
        self.out_of: dict[str, int] = {}
        # (level, node id, answer) triples, one per answer change
        self.credits: list[tuple[int, str, str]] = []


def _walk(
    frontier: Sequence[str],
    level: int,
    h: HierarchySpec,
    important: frozenset[str],
    evaluate,
    rng: np.random.Generator,
    traj: _Trajectory,
) -> None:
    for idx in rng.permutation(len(frontier)).tolist():
        nid = frontier[idx]
        children = h.children_of(nid)
        if children and nid in important:
            _walk(children, level + 1, h, important, evaluate, rng, traj)
            continue
        traj.visible.update(h.node(nid).positions)
        answer = evaluate(frozenset(traj.visible))
        if answer != traj.text_curr:
            traj.credits.append((level, nid, answer))
            traj.into[answer] = traj.into.get(answer, 0) + 1
            traj.out_of[traj.text_curr] = traj.out_of.get(traj.text_curr, 0) + 1
            traj.text_curr = answer


def _expected_evals(h: HierarchySpec, frontier: Sequence[str], important: frozenset[str]) -> int:
    total = 0
    for nid in frontier:
        children = h.children_of(nid)
        if children and nid in important:
            total += _expected_evals(h, children, important)
        else:
            total += 1
    return total


def _run_path(
    h: HierarchySpec,
    important: frozenset[str],
    evaluate,
    counter: _EvalCounter,
    rng: np.random.Generator,
    baseline_mode: str,
    path_index: int,
) -> _Trajectory:
    """One full walk, including its own baseline evaluation.

    The per-path model-call bill is exact: one evaluation per atomically
    unmasked node plus one for the empty-coalition baseline, and it is
    asserted here on every path.
    """
    before = counter.count
    frontier = h.level_nodes(1)
    try:
        baseline = evaluate(frozenset()) if baseline_mode == "evaluate_empty" else ""
        traj = _Trajectory(baseline)
        _walk(frontier, 1, h, important, evaluate, rng, traj)
    except SamplingError:
        raise
    except Exception as exc:
        raise SamplingError(
            f"backend failed on path {path_index}: {exc}", path_index=path_index
        ) from exc
    spent = counter.count - before
    expected = _expected_evals(h, frontier, important) + (
        1 if baseline_mode == "evaluate_empty" else 0
    )
    if spent != expected:
        raise SamplingError(
            f"path {path_index} spent {spent} evaluations, expected {expected}",
            path_index=path_index,
        )
    _check_telescope(traj, path_index)
    return traj


def _check_telescope(traj: _Trajectory, path_index: int) -> None:
    final = traj.text_curr
    for y in set(traj.into) | set(traj.out_of) | {traj.baseline, final}:
        lhs = traj.into.get(y, 0) - traj.out_of.get(y, 0)
        rhs = (1 if final == y else 0) - (1 if traj.baseline == y else 0)
        if lhs != rhs:
            raise SamplingError(
                f"telescoping identity violated for answer {y!r} on path "
                f"{path_index}; backend is not deterministic",
                path_index=path_index,
            )


def one_shapley_path(
    backend,
    x: TokenSeq,
    h: HierarchySpec,
    important: Iterable[str] = (),
    *,
    rng: np.random.Generator | None = None,
    mode: str = "pad",
    baseline_mode: str = "evaluate_empty",
    cache=None,
) -> dict[int, AttributionTable]:
    """One coarse-to-fine walk; returns per-level tables with sample_count 1.

    Nodes listed in `important` are expanded into an inner permutation of
    their children when the walk reaches them; everything else is unmasked
    atomically. Answer changes credit the node just unmasked, at its level.
    """
    important = frozenset(important)
    for nid in important:
        h.node(nid)
    if rng is None:
        rng = path_rng(0, 0)
    evaluate, counter = position_evaluator(backend, x, mode, cache)
    traj = _run_path(h, important, evaluate, counter, rng, baseline_mode, 0)

    levels: dict[int, dict[FeatureId, dict[str, int]]] = {}
    for level, nid, answer in traj.credits:
        row = levels.setdefault(level, {}).setdefault(nid, {})
        row[answer] = row.get(answer, 0) + 1
    out: dict[int, AttributionTable] = {}
    for level in range(1, h.num_levels + 1):
        universe = _level_universe(h, level, important)
        if not universe:
            continue
        out[level] = AttributionTable.from_counts(
            universe, levels.get(level, {}), 1
        )
    return out


def _level_universe(
    h: HierarchySpec, level: int, important: frozenset[str]
) -> tuple[str, ...]:
    """Feature ids a walk with `important` can credit at `level`: level-1 is
    the whole frontier, deeper levels only children of important nodes."""
    if level == 1:
        return h.level_nodes(1)
    out: list[str] = []
    for nid in h.level_nodes(level - 1):
        if nid in important and h.children_of(nid):
            out.extend(h.children_of(nid))
    return tuple(out)


def hierarchical_shapley(
    backend,
    x: TokenSeq,
    h: HierarchySpec,
    cfg: SamplerConfig | None = None,
    *,
    thresholds: float | Fraction | Sequence[float | Fraction] = Fraction(1, 10),
    max_levels: int | None = None,
    refine_paths: int | None = None,
    mode: str = "pad",
    cache=None,
    select_answer: str | None = None,
) -> HierarchicalResult:
    """Multi-phase refinement: sample a level, select, refine, repeat.

    Phase k walks num_paths permutations (refine_paths for k > 1) with every
    previously selected node expanded, keeps the level-k table, and selects
    level-k nodes whose normalized non-abstention mass reaches the level's
    threshold. Refinement stops when the selection is empty or the hierarchy
    runs out of levels. Phases draw from disjoint stream blocks, so the
    first phase is bit-identical to the flat sampler over the same nodes.
    """
    cfg = cfg or SamplerConfig()
    depth = h.num_levels if max_levels is None else min(max_levels, h.num_levels)
    if depth < 1:
        raise ValueError("hierarchy has no levels")
    if isinstance(thresholds, (float, int, Fraction)):
        tau_list = [as_threshold(thresholds)] * max(depth - 1, 0)
    else:
        tau_list = [as_threshold(t) for t in thresholds]
        if len(tau_list) < depth - 1:
            raise ValueError(
                f"need {depth - 1} thresholds for {depth} levels, got {len(tau_list)}"
            )
    evaluate, counter = position_evaluator(backend, x, mode, cache)

    per_level: dict[int, AttributionTable] = {}
    important_sets: dict[int, frozenset[str]] = {}
    used_thresholds: dict[int, Fraction] = {}
    important: frozenset[str] = frozenset()

    for level in range(1, depth + 1):
        num_paths = cfg.num_paths if level == 1 else (refine_paths or cfg.num_paths)
        universe = _level_universe(h, level, important)
        if not universe:
            per_level[level] = AttributionTable.empty(())
            break
        counts: dict[FeatureId, dict[str, int]] = {}
        for t in range(num_paths):
            rng = path_rng(cfg.seed, t, phase=level - 1)
            traj = _run_path(
                h, important, evaluate, counter, rng, cfg.baseline_mode, t
            )
            for credit_level, nid, answer in traj.credits:
                if credit_level == level:
                    row = counts.setdefault(nid, {})
                    row[answer] = row.get(answer, 0) + 1
        per_level[level] = AttributionTable.from_counts(universe, counts, num_paths)
        if level == depth:
            break
        selected = select_important(
            per_level[level], tau_list[level - 1], answer=select_answer
        )
        important_sets[level] = selected
        used_thresholds[level] = tau_list[level - 1]
        if not selected:
            per_level[level + 1] = AttributionTable.empty(())
            break
        important = important | selected

    return HierarchicalResult(per_level, important_sets, used_thresholds)
