"""Static per-record report: the hierarchical attribution heat map.

One self-contained HTML file per record, no external assets, so reports can
be archived next to the JSON results and opened anywhere. Tile intensity is
the node's non-abstention mass; hovering shows the exact mass and the
answer the node most often switched the generation into.
"""

from __future__ import annotations

import html
from datetime import datetime, timezone
from pathlib import Path

from .core import HierarchySpec
from .harness import BuiltContext, EvalRecord
from .hierarchy import HierarchicalResult
from .textnorm import ABSTAIN

_LEVEL_TITLES = {"document": "Passages", "sentence": "Sentences", "word": "Words"}

_CSS = """
body { font-family: Georgia, serif; margin: 2rem auto; max-width: 60rem;
       color: #1c1c1c; background: #fcfbf9; }
h1 { font-size: 1.3rem; } h2 { font-size: 1.05rem; margin-top: 1.6rem; }
.meta { color: #666; font-size: 0.85rem; }
.tiles { display: flex; flex-wrap: wrap; gap: 0.3rem; }
.tile { border: 1px solid #d8d2c8; border-radius: 3px; padding: 0.25rem 0.45rem;
        font-size: 0.9rem; line-height: 1.35; }
.tile .nid { display: block; font-size: 0.7rem; color: #555; }
.tile .mass { font-size: 0.7rem; color: #333; float: right; margin-left: 0.5rem; }
.empty { color: #888; font-style: italic; }
"""


def _tile_style(intensity: float) -> str:
    alpha = max(0.0, min(1.0, intensity))
    return f"background: rgba(214, 92, 36, {alpha:.3f});"


def _node_text(ctx: BuiltContext, h: HierarchySpec, node_id: str, limit: int = 12) -> str:
    words = [ctx.words[i] for i in h.node(node_id).positions]
    if len(words) > limit:
        words = words[:limit] + ["(...)"]
    return " ".join(words)


def _top_answer(table, fid) -> str | None:
    row = {a: c for a, c in table.counts_of(fid).items() if a != ABSTAIN}
    if not row:
        return None
    return max(row, key=lambda a: (row[a], a))


def render_report(
    record: EvalRecord,
    ctx: BuiltContext,
    h: HierarchySpec,
    result: HierarchicalResult,
    *,
    reproducible: bool = False,
) -> str:
    parts = [
        "<!doctype html>",
        "<html><head><meta charset='utf-8'>",
        f"<title>attribution: {html.escape(record.query_id)}</title>",
        f"<style>{_CSS}</style></head><body>",
        f"<h1>Attribution map: {html.escape(record.query_id)}</h1>",
        f"<p class='meta'>{html.escape(record.question)}</p>",
    ]
    if record.gold_answers:
        golds = ", ".join(html.escape(g) for g in record.gold_answers)
        parts.append(f"<p class='meta'>gold: {golds}</p>")
    if not reproducible:
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        parts.append(f"<p class='meta'>generated {stamp}</p>")

    for level in result.levels:
        table = result.table(level)
        if not table.feature_ids:
            parts.append(f"<h2>Level {level}</h2><p class='empty'>not refined</p>")
            continue
        kind = h.node(table.feature_ids[0]).kind
        title = _LEVEL_TITLES.get(kind, kind)
        parts.append(f"<h2>Level {level}: {html.escape(title)}</h2>")
        parts.append("<div class='tiles'>")
        for fid in table.feature_ids:
            mass = float(table.total_mass(fid, include_abstain=False))
            top = _top_answer(table, fid)
            tip = f"mass {mass:.3f}"
            if top is not None:
                tip += f"; switches into: {top}"
            parts.append(
                f"<span class='tile' style='{_tile_style(mass)}' title='{html.escape(tip, quote=True)}'>"
                f"<span class='nid'>{html.escape(str(fid))}</span>"
                f"{html.escape(_node_text(ctx, h, str(fid)))}"
                f"<span class='mass'>{mass:.2f}</span>"
                "</span>"
            )
        parts.append("</div>")
        selected = result.important(level)
        if selected:
            chosen = ", ".join(sorted(html.escape(str(s)) for s in selected))
            parts.append(f"<p class='meta'>refined below threshold gate: {chosen}</p>")
    parts.append("</body></html>")
    return "\n".join(parts)


def save_report(path: str | Path, *args, **kwargs) -> None:
    Path(path).write_text(render_report(*args, **kwargs), encoding="utf-8")
