"""Wright maps and experiment tables as text, SVG and JSON.

Every renderer is a pure function of its inputs, so output can be pinned
in golden files. Displayed numbers are rounded half-to-even.
"""
from __future__ import annotations

import json
import math
from decimal import ROUND_HALF_EVEN, Decimal
from html import escape
from typing import Sequence

from .calibrate import EXCLUDED, OK, ItemParams
from .evaluate import ComparisonReport, DistStats

BIN = 0.25
MAX_BAR = 40
EXTREME_GLYPH = "*"


def round_half_even(x: float, places: int = 2) -> str:
    q = Decimal(1).scaleb(-places)
    text = str(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_EVEN))
    return text[1:] if text.startswith("-") and Decimal(text) == 0 else text


def _wright_layout(params: ItemParams, thetas):
    items = [i for i in params.items if i.status != EXCLUDED]
    if not any(i.status == OK for i in items):
        raise ValueError("Wright map needs at least one ok item")
    values = [i.beta for i in items] + list(thetas)
    lo = math.floor((min(values) - 0.5) / BIN)
    hi = math.floor((max(values) + 0.5) / BIN)
    bins = list(range(lo, hi + 1))
    counts = {b: 0 for b in bins}
    for t in thetas:
        counts[math.floor(t / BIN)] += 1
    members: dict[int, list] = {b: [] for b in bins}
    for item in sorted(items, key=lambda i: (i.beta, i.item_id)):
        members[math.floor(item.beta / BIN)].append(item)
    excluded = [i.item_id for i in params.items if i.status == EXCLUDED]
    return bins, counts, members, excluded


def _label(item):
    return item.item_id + (EXTREME_GLYPH if item.status != OK else "")


def render_wright_map(params: ItemParams, abilities=None, format: str = "text") -> str:
    """Item-person map on one logit axis, lowest difficulty at the top.

    Items are listed one per row in ascending difficulty; persons are
    binned into 0.25-logit bands. ``abilities`` may be None for an
    items-only map.
    """
    thetas = [] if abilities is None else [float(t) for t in abilities.theta_hat]
    bins, counts, members, excluded = _wright_layout(params, thetas)
    per_mark = max(1, math.ceil(max(counts.values(), default=0) / MAX_BAR))
    if format == "text":
        return _wright_text(bins, counts, members, excluded, per_mark, len(thetas))
    if format == "svg":
        return _wright_svg(bins, counts, members, excluded, per_mark)
    raise ValueError(f"unknown format {format!r}")


def _wright_text(bins, counts, members, excluded, per_mark, n_persons):
    width = max(MAX_BAR, 7)
    lines = [
        "Wright map (logits, ascending from top)",
        f"persons: EAP estimates, n={n_persons}, '#' = {per_mark} "
        f"{'person' if per_mark == 1 else 'persons'}",
        f"{'logit':>7} | {'persons':<{width}} | items",
        f"{'-' * 7}-+-{'-' * width}-+-{'-' * 12}",
    ]
    for b in bins:
        bar = "#" * math.ceil(counts[b] / per_mark)
        label = f"{b * BIN:7.2f}"
        rows = members[b] or [None]
        for k, item in enumerate(rows):
            left = f"{label} | {bar:<{width}}" if k == 0 else f"{'':7} | {'':<{width}}"
            lines.append((f"{left} | {_label(item)}" if item else f"{left} |").rstrip())
    lines.append(f"{EXTREME_GLYPH} extreme item (all correct or all incorrect), shown at the clamp")
    if excluded:
        lines.append("excluded (no responses): " + ", ".join(excluded))
    return "\n".join(lines) + "\n"


def _wright_svg(bins, counts, members, excluded, per_mark):
    row_h, top, axis_x, bar_unit = 16, 40, 90, 6
    n_rows = sum(max(1, len(members[b])) for b in bins)
    height = top + row_h * n_rows + 40
    width = axis_x + bar_unit * MAX_BAR + 200
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        '<g font-family="monospace" font-size="11">',
        f'<text x="10" y="20">Wright map (logits, ascending from top); persons: EAP, '
        f'bar unit = {per_mark}</text>',
        f'<line x1="{axis_x}" y1="{top - 6}" x2="{axis_x}" y2="{top + row_h * n_rows}" '
        'stroke="black"/>',
    ]
    item_x = axis_x + bar_unit * MAX_BAR + 20
    y = top
    for b in bins:
        rows = members[b] or [None]
        out.append(f'<text x="{axis_x - 8}" y="{y + 11}" text-anchor="end">{b * BIN:.2f}</text>')
        if counts[b]:
            w = bar_unit * math.ceil(counts[b] / per_mark)
            out.append(f'<rect x="{axis_x + 2}" y="{y + 3}" width="{w}" height="{row_h - 6}" '
                       'fill="steelblue"/>')
        for item in rows:
            if item is not None:
                out.append(f'<text x="{item_x}" y="{y + 11}">{escape(_label(item))}</text>')
            y += row_h
    y += 16
    out.append(f'<text x="10" y="{y}">{EXTREME_GLYPH} extreme item shown at the clamp</text>')
    if excluded:
        out.append(f'<text x="10" y="{y + 14}">excluded: {escape(", ".join(excluded))}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


COMPARISON_HEADER = ("Generating Source", "Pearson ρ", "Spearman ρ", "RMSE")
DIST_HEADER = ("Generating Model", "Mean", "Standard Deviation (SD)", "Kurtosis", "N")


def _table(header, rows):
    widths = [max(len(h), *(len(r[k]) for r in rows)) for k, h in enumerate(header)]
    fmt = [f"{{:<{widths[0]}}}"] + [f"{{:>{w}}}" for w in widths[1:]]
    lines = ["  ".join(f.format(h) for f, h in zip(fmt, header))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(f.format(c) for f, c in zip(fmt, r)) for r in rows]
    return lines


def render_experiment_report(report: ComparisonReport, stats: Sequence[DistStats] = (),
                             format: str = "text") -> str:
    """Comparison table followed by the proficiency distribution table."""
    if not report.rows:
        raise ValueError("empty comparison report")
    if format == "json":
        doc = {"comparison": report.to_dict(), "distributions": [s.to_dict() for s in stats]}
        return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"
    if format != "text":
        raise ValueError(f"unknown format {format!r}")
    rows = [(r.label, round_half_even(r.pearson), round_half_even(r.spearman),
             round_half_even(report.rmse(r))) for r in report.rows]
    lines = ["Evaluation metrics against the benchmark calibration"]
    lines += _table(COMPARISON_HEADER, rows)
    lines.append(f"RMSE: {'mean-anchored' if report.anchored else 'raw'} difficulties")
    if stats:
        lines.append("")
        lines += _dist_lines(stats)
    return "\n".join(line.rstrip() for line in lines) + "\n"


def _dist_lines(stats):
    rows = [(s.label, round_half_even(s.mean), round_half_even(s.sd),
             "NA" if s.kurtosis is None else round_half_even(s.kurtosis), str(s.n))
            for s in stats]
    return ["Proficiency distributions (EAP estimates)"] + _table(DIST_HEADER, rows)


def render_dist_table(stats: Sequence[DistStats]) -> str:
    if not stats:
        raise ValueError("no distributions to render")
    return "\n".join(line.rstrip() for line in _dist_lines(stats)) + "\n"
