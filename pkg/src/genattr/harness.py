"""Evaluation harness: dataset ingestion, passage reranking, distillation,
vote baselines, pseudo-labeling, and position sweeps.

Records travel as JSON Lines; contexts for the toy readers are word
sequences with a separator token opening each passage. Metrics stay exact
where the attribution tables are exact (Fractions), collapsing to floats
only at the curve level.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .core import AttributionTable, Feature, HierarchyNode, HierarchySpec, Mask, TokenSeq
from .exceptions import DatasetSchemaError
from .models.base import Backend
from .models.toys import SEPARATOR, Vocabulary
from .textnorm import ABSTAIN, normalize_answer

__all__ = [
    "Passage",
    "EvalRecord",
    "RankedList",
    "load_dataset",
    "write_jsonl",
    "record_to_json",
    "normalize_answer",
    "answer_match",
    "passage_relevant",
    "labeled_relevant",
    "ContextBuilder",
    "BuiltContext",
    "context_hierarchy",
    "rerank_by_attribution",
    "recall_at_k",
    "auc",
    "distill_top_answers",
    "majority_vote",
    "top_k_accuracy",
    "pseudo_label",
    "position_sweep",
    "attribution_to_json",
    "PlantedBenchmark",
    "make_planted_benchmark",
]

logger = logging.getLogger(__name__)

LABELS = ("relevant", "irrelevant")


@dataclass(frozen=True)
class Passage:
    passage_id: str
    title: str
    text: str
    label: str | None = None

    def __post_init__(self):
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"bad passage label {self.label!r}")


@dataclass(frozen=True)
class EvalRecord:
    query_id: str
    question: str
    passages: tuple[Passage, ...]
    gold_answers: tuple[str, ...]

    def __post_init__(self):
        ids = [p.passage_id for p in self.passages]
        if len(set(ids)) != len(ids):
            raise ValueError(f"record {self.query_id}: duplicate passage ids")

    @property
    def passage_ids(self) -> tuple[str, ...]:
        return tuple(p.passage_id for p in self.passages)

    def passage(self, passage_id: str) -> Passage:
        for p in self.passages:
            if p.passage_id == passage_id:
                return p
        raise KeyError(f"unknown passage id {passage_id!r}")


@dataclass(frozen=True)
class RankedList:
    """Passage ids with non-increasing scores."""

    entries: tuple[tuple[str, Fraction], ...]

    def __post_init__(self):
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(pid for pid, _ in self.entries)

    def score_of(self, passage_id: str) -> Fraction:
        for pid, s in self.entries:
            if pid == passage_id:
                return s
        raise KeyError(f"unknown passage id {passage_id!r}")


# ---------------------------------------------------------------------------
# dataset IO

_RECORD_KEYS = {"query_id", "question", "passages", "gold_answers"}
_PASSAGE_KEYS = {"id", "title", "text", "label"}


def _schema_error(line_no: int, msg: str) -> DatasetSchemaError:
    return DatasetSchemaError(f"line {line_no}: {msg}")


def _parse_passage(obj, line_no: int, index: int) -> Passage:
    where = f"passages[{index}]"
    if not isinstance(obj, dict):
        raise _schema_error(line_no, f"{where} is not an object")
    unknown = set(obj) - _PASSAGE_KEYS
    if unknown:
        raise _schema_error(line_no, f"{where} has unknown keys {sorted(unknown)}")
    for key in ("id", "title", "text"):
        if key not in obj:
            raise _schema_error(line_no, f"{where} missing field {key!r}")
        if not isinstance(obj[key], str):
            raise _schema_error(line_no, f"{where}.{key} is not a string")
    label = obj.get("label")
    if label is not None and label not in LABELS:
        raise _schema_error(line_no, f"{where}.label must be one of {LABELS} or null")
    return Passage(obj["id"], obj["title"], obj["text"], label)


def _parse_record(obj, line_no: int) -> EvalRecord:
    if not isinstance(obj, dict):
        raise _schema_error(line_no, "record is not an object")
    unknown = set(obj) - _RECORD_KEYS
    if unknown:
        raise _schema_error(line_no, f"unknown keys {sorted(unknown)}")
    missing = sorted(_RECORD_KEYS - set(obj))
    if missing:
        raise _schema_error(line_no, f"missing fields {missing}")
    if not isinstance(obj["query_id"], str):
        raise _schema_error(line_no, "query_id is not a string")
    if not isinstance(obj["question"], str):
        raise _schema_error(line_no, "question is not a string")
    if not isinstance(obj["passages"], list):
        raise _schema_error(line_no, "passages is not a list")
    golds = obj["gold_answers"]
    if not isinstance(golds, list) or any(not isinstance(g, str) for g in golds):
        raise _schema_error(line_no, "gold_answers is not a list of strings")
    passages = tuple(
        _parse_passage(p, line_no, i) for i, p in enumerate(obj["passages"])
    )
    try:
        return EvalRecord(obj["query_id"], obj["question"], passages, tuple(golds))
    except ValueError as e:
        raise _schema_error(line_no, str(e)) from None


def load_dataset(path: str | Path) -> Iterator[EvalRecord]:
    """Stream schema-checked records from a JSON Lines file.

    Malformed lines abort the stream with the 1-based line number; blank
    lines are skipped so trailing newlines stay harmless.
    """
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise _schema_error(line_no, f"invalid JSON ({e.msg})") from None
            yield _parse_record(obj, line_no)


def record_to_json(record: EvalRecord) -> dict:
    return {
        "query_id": record.query_id,
        "question": record.question,
        "passages": [
            {"id": p.passage_id, "title": p.title, "text": p.text, "label": p.label}
            for p in record.passages
        ],
        "gold_answers": list(record.gold_answers),
    }


def write_jsonl(records: Iterable[EvalRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record), sort_keys=True))
            fh.write("\n")


# ---------------------------------------------------------------------------
# matching

def answer_match(candidate: str, gold_answers: Sequence[str]) -> bool:
    """Normalized exact match against any gold answer."""
    cand = normalize_answer(candidate)
    return any(cand == normalize_answer(g) for g in gold_answers)


def passage_relevant(passage: Passage, gold_answers: Sequence[str]) -> bool:
    """Normalized substring containment of any gold answer in the passage."""
    text = normalize_answer(passage.text)
    for g in gold_answers:
        g = normalize_answer(g)
        if g and g in text:
            return True
    return False


def labeled_relevant(passage: Passage, gold_answers: Sequence[str]) -> bool:
    """Relevance for metrics: an explicit label wins, containment otherwise."""
    if passage.label is not None:
        return passage.label == "relevant"
    return passage_relevant(passage, gold_answers)


# ---------------------------------------------------------------------------
# context building

@dataclass(frozen=True)
class BuiltContext:
    """One encoded context: token sequence, passage features, raw words."""

    x: TokenSeq
    order: tuple[str, ...]
    features: tuple[Feature, ...]
    spans: Mapping[str, tuple[int, int]]
    words: tuple[str, ...]

    def full_mask(self) -> Mask:
        return Mask.full(len(self.x))


class ContextBuilder:
    """Encodes records into separator-delimited contexts over one shared
    vocabulary, so every reader built against that vocabulary sees the same
    token ids."""

    def __init__(self, vocab: Vocabulary | None = None, separator: str = SEPARATOR):
        self.vocab = vocab if vocab is not None else Vocabulary()
        self.separator = separator

    def context(
        self, record: EvalRecord, order: Sequence[str] | None = None
    ) -> BuiltContext:
        """Concatenate passages (a separator opening each) in `order`,
        defaulting to retriever order. Features cover passage words only;
        separators stay permanently visible."""
        ids = tuple(order) if order is not None else record.passage_ids
        if sorted(ids) != sorted(set(ids)) or not set(ids) <= set(record.passage_ids):
            raise ValueError("order must be distinct passage ids of the record")
        words: list[str] = []
        spans: dict[str, tuple[int, int]] = {}
        features: list[Feature] = []
        for pid in ids:
            passage = record.passage(pid)
            start = len(words)
            words.append(self.separator)
            words.extend(passage.text.split())
            spans[pid] = (start, len(words))
            features.append((pid, tuple(range(start + 1, len(words)))))
        x = self.vocab.encode(words)
        return BuiltContext(x, ids, tuple(features), spans, tuple(words))

    def single(self, record: EvalRecord, passage_id: str) -> BuiltContext:
        return self.context(record, order=(passage_id,))

    def hierarchy(self, ctx: BuiltContext, *, sentences: bool = False) -> HierarchySpec:
        return context_hierarchy(ctx, sentences=sentences)


def context_hierarchy(ctx: BuiltContext, *, sentences: bool = False) -> HierarchySpec:
    """Two-level passage/word tree over a built context, or three-level
    passage/sentence/word when `sentences` is set (sentence breaks after .,
    ?, or !). The separator token rides along as the first word of its
    passage."""
    nodes: list[HierarchyNode] = []
    for pid in ctx.order:
        lo, hi = ctx.spans[pid]
        word_ids = [f"{pid}.w{i - lo}" for i in range(lo, hi)]
        word_nodes = [
            HierarchyNode(wid, "word", (i,))
            for wid, i in zip(word_ids, range(lo, hi))
        ]
        if sentences:
            groups: list[list[int]] = [[]]
            for i in range(lo, hi):
                groups[-1].append(i)
                if ctx.words[i][-1] in ".?!" and i + 1 < hi:
                    groups.append([])
            sent_ids = []
            for j, grp in enumerate(groups):
                sid = f"{pid}.s{j}"
                sent_ids.append(sid)
                nodes.append(
                    HierarchyNode(
                        sid, "sentence", tuple(grp),
                        tuple(word_ids[i - lo] for i in grp),
                    )
                )
            children = tuple(sent_ids)
        else:
            children = tuple(word_ids)
        nodes.extend(word_nodes)
        nodes.append(
            HierarchyNode(pid, "document", tuple(range(lo, hi)), children)
        )
    return HierarchySpec(nodes, ctx.order, len(ctx.x))


# ---------------------------------------------------------------------------
# reranking and curves

def rerank_by_attribution(record: EvalRecord, doc_table: AttributionTable) -> RankedList:
    """Stable sort of the record's passages by total non-abstention mass,
    descending; ties keep retriever order."""
    if set(doc_table.feature_ids) != set(record.passage_ids):
        raise ValueError("attribution table keys do not match record passages")
    scores = {
        pid: doc_table.total_mass(pid, include_abstain=False)
        for pid in record.passage_ids
    }
    ranked = sorted(record.passage_ids, key=lambda pid: -scores[pid])
    return RankedList(tuple((pid, scores[pid]) for pid in ranked))


def recall_at_k(
    records: Sequence[EvalRecord],
    rankings: Sequence[RankedList],
    k_max: int | None = None,
) -> tuple[float, ...]:
    """r(k) = fraction of records with a relevant passage in the top k,
    k = 1..k_max (default: the largest passage count seen)."""
    if len(records) != len(rankings):
        raise ValueError("one ranking per record required")
    if not records:
        raise ValueError("no records")
    if k_max is None:
        k_max = max(len(r.passages) for r in records)
    if k_max < 1:
        raise ValueError("k_max must be positive")
    hits = [0] * k_max
    for record, ranking in zip(records, rankings):
        if sorted(ranking.ids) != sorted(record.passage_ids):
            raise ValueError(
                f"ranking for {record.query_id} is not a permutation of its passages"
            )
        best: int | None = None
        for rank, pid in enumerate(ranking.ids, start=1):
            if labeled_relevant(record.passage(pid), record.gold_answers):
                best = rank
                break
        if best is not None:
            for k in range(best, k_max + 1):
                hits[k - 1] += 1
    n = len(records)
    return tuple(h / n for h in hits)


def auc(curve: Sequence[float]) -> float:
    """Mean of the curve scaled to [0, 100]."""
    if not curve:
        raise ValueError("empty curve")
    return 100.0 * sum(curve) / len(curve)


def top_k_accuracy(
    records: Sequence[EvalRecord],
    candidate_lists: Sequence[Sequence[str]],
    k: int,
) -> float:
    """Fraction of records whose top-k candidates contain a gold answer."""
    if k < 1:
        raise ValueError("k must be positive")
    if len(records) != len(candidate_lists):
        raise ValueError("one candidate list per record required")
    if not records:
        raise ValueError("no records")
    hit = sum(
        1
        for record, cands in zip(records, candidate_lists)
        if any(answer_match(c, record.gold_answers) for c in list(cands)[:k])
    )
    return hit / len(records)


# ---------------------------------------------------------------------------
# distillation and baselines

def distill_top_answers(attrib: AttributionTable, k: int) -> list[str]:
    """Answers ranked by total mass across all features, abstention dropped,
    ties broken lexicographically, truncated to k."""
    if k < 1:
        raise ValueError("k must be positive")
    totals: dict[str, int] = {}
    for fid in attrib.feature_ids:
        for answer, count in attrib.counts_of(fid).items():
            if answer == ABSTAIN:
                continue
            totals[answer] = totals.get(answer, 0) + count
    ranked = sorted(totals, key=lambda a: (-totals[a], a))
    return ranked[:k]


def majority_vote(
    record: EvalRecord,
    backend: Backend,
    k: int,
    *,
    builder: ContextBuilder,
    mode: str = "pad",
) -> list[str]:
    """One single-passage generation per passage; distinct non-abstention
    answers ranked by vote count, ties by first occurrence, truncated to k."""
    if k < 1:
        raise ValueError("k must be positive")
    votes: dict[str, int] = {}
    first: dict[str, int] = {}
    for i, pid in enumerate(record.passage_ids):
        ctx = builder.single(record, pid)
        answer = normalize_answer(backend.generate(ctx.x, ctx.full_mask(), mode).answer)
        if answer == ABSTAIN:
            continue
        votes[answer] = votes.get(answer, 0) + 1
        first.setdefault(answer, i)
    ranked = sorted(votes, key=lambda a: (-votes[a], first[a]))
    return ranked[:k]


def pseudo_label(
    record: EvalRecord,
    backend: Backend,
    *,
    builder: ContextBuilder,
    mode: str = "pad",
) -> EvalRecord:
    """Augment a labeled record: each relevant-labeled passage answers alone,
    the non-abstention answers join the gold set, and every passage is then
    relabeled by containment against the widened set. Relabeling is monotone:
    an original relevant label is never withdrawn."""
    relevant = [p for p in record.passages if p.label == "relevant"]
    if not relevant:
        logger.warning(
            "record %s has no relevant-labeled passage; passed through unchanged",
            record.query_id,
        )
        return record
    pseudo: list[str] = []
    for p in relevant:
        ctx = builder.single(record, p.passage_id)
        answer = normalize_answer(backend.generate(ctx.x, ctx.full_mask(), mode).answer)
        if answer != ABSTAIN and answer and answer not in pseudo:
            pseudo.append(answer)
    known = {normalize_answer(g) for g in record.gold_answers}
    widened = record.gold_answers + tuple(a for a in pseudo if a not in known)
    passages = tuple(
        replace(
            p,
            label="relevant"
            if p.label == "relevant" or passage_relevant(p, widened)
            else "irrelevant",
        )
        for p in record.passages
    )
    return replace(record, passages=passages, gold_answers=widened)


def position_sweep(
    record: EvalRecord,
    backend: Backend,
    gold_passage_id: str,
    *,
    builder: ContextBuilder,
    mode: str = "pad",
) -> tuple[float, ...]:
    """Correctness of the full-context answer with the gold passage moved to
    each slot in turn, the rest keeping their relative order."""
    record.passage(gold_passage_id)
    others = [pid for pid in record.passage_ids if pid != gold_passage_id]
    curve = []
    for j in range(len(record.passages)):
        order = others[:j] + [gold_passage_id] + others[j:]
        ctx = builder.context(record, order)
        answer = backend.generate(ctx.x, ctx.full_mask(), mode).answer
        curve.append(1.0 if answer_match(answer, record.gold_answers) else 0.0)
    return tuple(curve)


def attribution_to_json(table: AttributionTable) -> dict:
    """Exact, deterministic JSON shape: integer counts plus the divisor."""
    return {
        "feature_ids": list(table.feature_ids),
        "counts": {
            str(fid): dict(sorted(table.counts_of(fid).items()))
            for fid in table.feature_ids
        },
        "sample_count": table.sample_count,
    }


# ---------------------------------------------------------------------------
# synthetic benchmark

@dataclass(frozen=True)
class PlantedBenchmark:
    """Planted-relevance corpus: per record, one passage contains the gold
    answer word twice and a few other passages carry one decoy answer word
    each. The keyword table maps every answer word to itself, so the keyword
    readers recover exactly the planted structure."""

    records: tuple[EvalRecord, ...]
    keywords: dict[str, str]
    builder: ContextBuilder


def make_planted_benchmark(
    num_records: int = 200,
    num_passages: int = 10,
    *,
    num_decoys: int = 3,
    words_per_passage: int = 10,
    seed: int = 0,
) -> PlantedBenchmark:
    """Deterministic synthetic retrieval corpus.

    The relevant passage lands at a uniform retriever rank, so retriever-order
    recall is flat by construction and any signal in a reranking comes from
    attribution. Decoy words give the readers competing answers.
    """
    if num_decoys > num_passages - 1:
        raise ValueError("need at least one slot per decoy besides the relevant one")
    if words_per_passage < 2:
        raise ValueError("passages need room for two planted words")
    rng = np.random.default_rng(seed)
    filler = [f"filler{i:02d}" for i in range(40)]
    keywords: dict[str, str] = {}
    records = []
    for r in range(num_records):
        gold = f"ans{r:03d}g"
        decoys = [f"ans{r:03d}d{j}" for j in range(num_decoys)]
        keywords[gold] = gold
        for dword in decoys:
            keywords[dword] = dword
        rel_slot = int(rng.integers(num_passages))
        other_slots = [i for i in range(num_passages) if i != rel_slot]
        decoy_slots = rng.choice(len(other_slots), size=num_decoys, replace=False)
        decoy_at = {other_slots[int(s)]: decoys[j] for j, s in enumerate(decoy_slots)}
        passages = []
        for slot in range(num_passages):
            words = [filler[int(w)] for w in rng.integers(len(filler), size=words_per_passage)]
            if slot == rel_slot:
                a, b = rng.choice(words_per_passage, size=2, replace=False)
                words[int(a)] = gold
                words[int(b)] = gold
                label = "relevant"
            else:
                if slot in decoy_at:
                    pos = int(rng.integers(words_per_passage))
                    words[pos] = decoy_at[slot]
                label = "irrelevant"
            passages.append(
                Passage(f"q{r:03d}p{slot}", f"passage {slot}", " ".join(words), label)
            )
        records.append(
            EvalRecord(
                f"q{r:03d}",
                f"which planted word answers query {r:03d}",
                tuple(passages),
                (gold,),
            )
        )
    builder = ContextBuilder()
    for record in records:
        builder.context(record)  # pre-intern every word once, deterministically
    return PlantedBenchmark(tuple(records), keywords, builder)
