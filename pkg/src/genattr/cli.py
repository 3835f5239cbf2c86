"""Command-line front end.

Subcommands: explain, rerank, distill, sweep, oracle-check. Results are a
single JSON document on stdout; logs go to stderr; explain additionally
writes per-record JSON and HTML artifacts. Configuration is a flat
key=value file with flag overrides (the flag wins), every key validated
before the first model call.

Exit codes: 0 success, 1 runtime failure, 2 config error, 3 oracle
tolerance breach.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

from .engine import (
    BASELINE_MODES,
    SamplerConfig,
    banzhaf_estimate,
    exact_banzhaf_oracle,
    exact_shapley_oracle,
    permutation_shapley,
)
from .games import GAME_NAMES, build_game
from .harness import (
    ContextBuilder,
    EvalRecord,
    RankedList,
    attribution_to_json,
    auc,
    context_hierarchy,
    distill_top_answers,
    labeled_relevant,
    load_dataset,
    majority_vote,
    normalize_answer,
    position_sweep,
    recall_at_k,
    rerank_by_attribution,
    top_k_accuracy,
)
from .hierarchy import hierarchical_shapley, select_important
from .models.base import Backend, CallStats
from .models.remote import RemoteBackend
from .models.toys import ToyKeywordReader, VotingKeywordReader
from .report import save_report
from .rngs import derive_seed
from .spectree import SpecTree
from .textnorm import ABSTAIN

logger = logging.getLogger("genattr.cli")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_TOLERANCE = 3

BACKENDS = ("toy", "voting", "remote")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    backend: str = "toy"
    endpoint: str | None = None
    dataset: str | None = None
    keywords: str | None = None
    paths: int = 100
    refine_paths: int | None = None
    seed: int = 0
    threshold: float = 0.1
    bernoulli_p: float = 0.5
    baseline_mode: str = "evaluate_empty"
    cache: str = "off"
    mode: str = "pad"
    k_max: int | None = None
    top_k: int = 5
    repass: bool = False
    workers: int = 1
    reproducible: bool = False
    out: str | None = None
    depth: int = 2
    oracle_paths: int = 20000
    oracle_tolerance: float = 0.02
    max_records: int | None = None

    @property
    def cache_on(self) -> bool:
        return self.cache == "on"

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.paths < 1:
            raise ConfigError("paths must be >= 1")
        if self.refine_paths is not None and self.refine_paths < 1:
            raise ConfigError("refine_paths must be >= 1")
        if not 0 <= self.threshold <= 1:
            raise ConfigError("threshold must lie in [0, 1]")
        if not 0 < self.bernoulli_p < 1:
            raise ConfigError("bernoulli_p must lie in (0, 1)")
        if self.baseline_mode not in BASELINE_MODES:
            raise ConfigError(f"baseline_mode must be one of {BASELINE_MODES}")
        if self.cache not in ("on", "off"):
            raise ConfigError("cache must be 'on' or 'off'")
        if self.mode not in ("pad", "drop"):
            raise ConfigError("mode must be 'pad' or 'drop'")
        if self.k_max is not None and self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.depth not in (2, 3):
            raise ConfigError("depth must be 2 or 3")
        if self.oracle_paths < 1:
            raise ConfigError("oracle_paths must be >= 1")
        if self.oracle_tolerance <= 0:
            raise ConfigError("oracle_tolerance must be positive")
        if self.max_records is not None and self.max_records < 1:
            raise ConfigError("max_records must be >= 1")


_BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True,
               "false": False, "no": False, "off": False, "0": False}


def _coerce(key: str, raw: str, kind):
    raw = raw.strip()
    if raw.lower() in ("none", "null", ""):
        return None
    try:
        if kind is bool:
            return _BOOL_WORDS[raw.lower()]
        return kind(raw)
    except (ValueError, KeyError):
        raise ConfigError(f"key {key!r}: cannot parse {raw!r}") from None


_KEY_TYPES = {
    "backend": str, "endpoint": str, "dataset": str, "keywords": str,
    "paths": int, "refine_paths": int, "seed": int, "threshold": float,
    "bernoulli_p": float, "baseline_mode": str, "cache": str, "mode": str,
    "k_max": int, "top_k": int, "repass": bool, "workers": int,
    "reproducible": bool, "out": str, "depth": int, "oracle_paths": int,
    "oracle_tolerance": float, "max_records": int,
}
assert set(_KEY_TYPES) == {f.name for f in fields(RunConfig)}


def read_config_file(path: str) -> dict:
    """Flat key=value lines; # starts a comment; unknown keys rejected."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path!r}: {e}") from None
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_TYPES:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw, _KEY_TYPES[key])
        except ConfigError as e:
            raise ConfigError(f"config line {line_no}: {e}") from None
    return values


def assemble_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config is not None:
        cfg = replace(cfg, **read_config_file(args.config))
    overrides = {}
    for key in _KEY_TYPES:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            overrides[key] = flag_value
    if overrides:
        cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# shared plumbing

def _load_records(cfg: RunConfig) -> list[EvalRecord]:
    if cfg.dataset is None:
        raise ConfigError("this command needs a dataset (config key 'dataset')")
    if not Path(cfg.dataset).is_file():
        raise ConfigError(f"dataset file not found: {cfg.dataset}")
    records = list(load_dataset(cfg.dataset))
    if cfg.max_records is not None:
        records = records[: cfg.max_records]
    if not records:
        raise ConfigError(f"dataset {cfg.dataset} holds no records")
    return records


def _keyword_table(cfg: RunConfig, records: list[EvalRecord]) -> dict[str, str]:
    if cfg.keywords is not None:
        try:
            table = json.loads(Path(cfg.keywords).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read keywords file {cfg.keywords!r}: {e}") from None
        if not isinstance(table, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in table.items()
        ):
            raise ConfigError("keywords file must map phrase strings to answer strings")
        return table
    # stand-in reader: every gold answer keys itself
    golds = sorted({g for record in records for g in record.gold_answers})
    return {g: g for g in golds}


def _build_backend(cfg: RunConfig, records: list[EvalRecord], builder: ContextBuilder) -> Backend:
    if cfg.backend == "remote":
        try:
            return RemoteBackend(builder.vocab, endpoint=cfg.endpoint)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    table = _keyword_table(cfg, records)
    cls = ToyKeywordReader if cfg.backend == "toy" else VotingKeywordReader
    return cls(table, builder.vocab)


def _stats_json(stats: CallStats) -> dict:
    return {
        "encoder_calls": stats.encoder_calls,
        "decoder_calls": stats.decoder_calls,
        "verification_calls": stats.verification_calls,
    }


def _frac(value: Fraction) -> str:
    return str(value)


def _record_seed(cfg: RunConfig, command: str, record: EvalRecord) -> int:
    return derive_seed(cfg.seed, command, record.query_id)


def _sampler_config(cfg: RunConfig, seed: int) -> SamplerConfig:
    return SamplerConfig(
        num_paths=cfg.paths,
        seed=seed,
        bernoulli_p=cfg.bernoulli_p,
        baseline_mode=cfg.baseline_mode,
    )


# ---------------------------------------------------------------------------
# commands

def cmd_explain(cfg: RunConfig) -> tuple[dict, int]:
    records = _load_records(cfg)
    builder = ContextBuilder()
    backend = _build_backend(cfg, records, builder)
    out_dir = Path(cfg.out) if cfg.out else Path("genattr-out")
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    before = backend.stats.snapshot()
    for record in records:
        ctx = builder.context(record)
        h = context_hierarchy(ctx, sentences=cfg.depth == 3)
        result = hierarchical_shapley(
            backend, ctx.x, h,
            _sampler_config(cfg, _record_seed(cfg, "explain", record)),
            thresholds=cfg.threshold,
            refine_paths=cfg.refine_paths,
            mode=cfg.mode,
            cache=SpecTree() if cfg.cache_on else None,
        )
        payload = {
            "query_id": record.query_id,
            "levels": {
                str(level): attribution_to_json(result.table(level))
                for level in result.levels
            },
            "important": {
                str(level): sorted(result.important(level))
                for level in result.levels
                if level in result.important_sets
            },
            "thresholds": {
                str(level): _frac(tau) for level, tau in result.thresholds.items()
            },
        }
        json_path = out_dir / f"{record.query_id}.json"
        json_path.write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        html_path = out_dir / f"{record.query_id}.html"
        save_report(html_path, record, ctx, h, result, reproducible=cfg.reproducible)
        outputs.extend([str(json_path), str(html_path)])
        logger.info("explained %s -> %s", record.query_id, json_path)
    summary = {
        "command": "explain",
        "records": len(records),
        "outputs": sorted(outputs),
        "call_stats": _stats_json(backend.stats.since(before)),
    }
    return summary, EXIT_OK


def _doc_attribution(cfg, backend, builder, record, command: str):
    ctx = builder.context(record)
    return ctx, permutation_shapley(
        backend, ctx.x, ctx.features,
        _sampler_config(cfg, _record_seed(cfg, command, record)),
        mode=cfg.mode,
        cache=SpecTree() if cfg.cache_on else None,
        workers=cfg.workers,
    )


def cmd_rerank(cfg: RunConfig) -> tuple[dict, int]:
    records = _load_records(cfg)
    builder = ContextBuilder()
    backend = _build_backend(cfg, records, builder)
    rankings, baselines, per_record = [], [], []
    for record in records:
        _, table = _doc_attribution(cfg, backend, builder, record, "rerank")
        ranking = rerank_by_attribution(record, table)
        rankings.append(ranking)
        baselines.append(
            RankedList(tuple((pid, Fraction(0)) for pid in record.passage_ids))
        )
        per_record.append({
            "query_id": record.query_id,
            "ranking": list(ranking.ids),
            "scores": {pid: _frac(score) for pid, score in ranking.entries},
        })
        logger.info("reranked %s: top passage %s", record.query_id, ranking.ids[0])
    k_max = cfg.k_max or max(len(r.passages) for r in records)
    base_curve = recall_at_k(records, baselines, k_max)
    rr_curve = recall_at_k(records, rankings, k_max)
    payload = {
        "command": "rerank",
        "k_max": k_max,
        "retriever": {"curve": list(base_curve), "auc": auc(base_curve)},
        "reranked": {"curve": list(rr_curve), "auc": auc(rr_curve)},
        "per_record": per_record,
    }
    return payload, EXIT_OK


def cmd_distill(cfg: RunConfig) -> tuple[dict, int]:
    records = _load_records(cfg)
    builder = ContextBuilder()
    backend = _build_backend(cfg, records, builder)
    distilled, votes, per_record = [], [], []
    for record in records:
        _, table = _doc_attribution(cfg, backend, builder, record, "distill")
        candidates = distill_top_answers(table, cfg.top_k)
        if cfg.repass:
            selected = select_important(table, cfg.threshold)
            if selected:
                order = [pid for pid in record.passage_ids if pid in selected]
                ctx2 = builder.context(record, order)
                answer = normalize_answer(
                    backend.generate(ctx2.x, ctx2.full_mask(), cfg.mode).answer
                )
                if answer != ABSTAIN:
                    candidates = [answer] + [c for c in candidates if c != answer]
                    candidates = candidates[: cfg.top_k]
        mv = majority_vote(record, backend, cfg.top_k, builder=builder, mode=cfg.mode)
        distilled.append(candidates)
        votes.append(mv)
        per_record.append({
            "query_id": record.query_id,
            "distilled": candidates,
            "majority_vote": mv,
        })
        logger.info("distilled %s: %s", record.query_id, candidates[:1] or ["-"])
    payload = {
        "command": "distill",
        "top_k": cfg.top_k,
        "repass": cfg.repass,
        "distill_accuracy": {
            str(k): top_k_accuracy(records, distilled, k)
            for k in range(1, cfg.top_k + 1)
        },
        "majority_vote_accuracy": {
            str(k): top_k_accuracy(records, votes, k)
            for k in range(1, cfg.top_k + 1)
        },
        "per_record": per_record,
    }
    return payload, EXIT_OK


def cmd_sweep(cfg: RunConfig) -> tuple[dict, int]:
    records = _load_records(cfg)
    builder = ContextBuilder()
    backend = _build_backend(cfg, records, builder)
    per_record, curves = [], []
    for record in records:
        gold_pid = next(
            (
                p.passage_id
                for p in record.passages
                if labeled_relevant(p, record.gold_answers)
            ),
            None,
        )
        if gold_pid is None:
            logger.warning("record %s has no relevant passage; skipped", record.query_id)
            continue
        curve = position_sweep(record, backend, gold_pid, builder=builder, mode=cfg.mode)
        curves.append(curve)
        per_record.append({
            "query_id": record.query_id,
            "gold_passage": gold_pid,
            "curve": list(curve),
        })
        logger.info("swept %s across %d ranks", record.query_id, len(curve))
    if not curves:
        raise ConfigError("no record has a relevant passage to sweep")
    width = max(len(c) for c in curves)
    mean_curve = []
    for j in range(width):
        column = [c[j] for c in curves if len(c) > j]
        mean_curve.append(sum(column) / len(column))
    payload = {
        "command": "sweep",
        "records_swept": len(curves),
        "mean_curve": mean_curve,
        "per_record": per_record,
    }
    return payload, EXIT_OK


def _table_error(exact, estimate) -> float:
    answers = set()
    for table in (exact, estimate):
        for fid in table.feature_ids:
            answers |= set(table.counts_of(fid))
    return max(
        (
            abs(float(exact.mass(fid, a) - estimate.mass(fid, a)))
            for fid in exact.feature_ids
            for a in answers
        ),
        default=0.0,
    )


def cmd_oracle_check(cfg: RunConfig) -> tuple[dict, int]:
    tolerance = cfg.oracle_tolerance
    games_out = {}
    worst = 0.0
    for name in GAME_NAMES:
        game = build_game(name)
        seed = derive_seed(cfg.seed, "oracle", name)
        exact = exact_shapley_oracle(game.backend.fork(), game.x, game.features, mode=game.mode)
        sampled = permutation_shapley(
            game.backend.fork(), game.x, game.features,
            SamplerConfig(num_paths=cfg.oracle_paths, seed=seed,
                          baseline_mode=cfg.baseline_mode),
            mode=game.mode,
        )
        perm_err = _table_error(exact, sampled)
        banzhaf_err = {}
        for p in (0.5, 0.1):
            exact_b = exact_banzhaf_oracle(
                game.backend.fork(), game.x, game.features, p=p, mode=game.mode
            )
            est_b = banzhaf_estimate(
                game.backend.fork(), game.x, game.features,
                SamplerConfig(num_paths=cfg.oracle_paths,
                              seed=derive_seed(seed, str(p)),
                              bernoulli_p=p, baseline_mode=cfg.baseline_mode),
                mode=game.mode,
            )
            banzhaf_err[str(p)] = _table_error(exact_b, est_b)
        games_out[name] = {
            "num_features": game.num_features,
            "permutation_error": perm_err,
            "banzhaf_error": banzhaf_err,
        }
        worst = max(worst, perm_err, *banzhaf_err.values())
        logger.info("game %s: perm %.4f banzhaf %s", name, perm_err, banzhaf_err)
    ok = worst <= tolerance
    payload = {
        "command": "oracle-check",
        "paths": cfg.oracle_paths,
        "tolerance": tolerance,
        "max_error": worst,
        "ok": ok,
        "games": games_out,
    }
    return payload, EXIT_OK if ok else EXIT_TOLERANCE


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "explain": cmd_explain,
    "rerank": cmd_rerank,
    "distill": cmd_distill,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genattr",
        description="Feature attribution for text generation: explain, rerank, distill.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=None, help="flat key=value config file")
        cmd.add_argument("--backend", choices=BACKENDS, default=None)
        cmd.add_argument("--endpoint", default=None)
        cmd.add_argument("--paths", type=int, default=None, metavar="T")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--threshold", type=float, default=None)
        cmd.add_argument("--bernoulli-p", dest="bernoulli_p", type=float, default=None)
        cmd.add_argument("--cache", choices=("on", "off"), default=None)
        cmd.add_argument("--mode", choices=("pad", "drop"), default=None)
        cmd.add_argument("--k-max", dest="k_max", type=int, default=None)
        cmd.add_argument("--repass", action="store_const", const=True, default=None)
        cmd.add_argument("--workers", type=int, default=None)
        cmd.add_argument(
            "--reproducible", action="store_const", const=True, default=None
        )
        cmd.add_argument("--out", default=None, metavar="DIR")
    return parser


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = assemble_config(args)
    except ConfigError as e:
        _emit({"error": {"kind": "config", "message": str(e)}})
        return EXIT_CONFIG
    try:
        payload, code = _COMMANDS[args.command](cfg)
    except ConfigError as e:
        _emit({"error": {"kind": "config", "message": str(e)}})
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports, not raises
        logger.exception("command failed")
        _emit({"error": {"kind": "runtime", "message": f"{type(e).__name__}: {e}"}})
        return EXIT_RUNTIME
    _emit(payload)
    return code


if __name__ == "__main__":
    sys.exit(main())
