"""Report rendering: markdown and CSV tables for the six-dimension benchmark
and the classification harness. Display values round half away from zero to
three decimals; raw means stay untouched upstream.
"""

from __future__ import annotations

import csv
import io
from decimal import ROUND_HALF_UP, Decimal

from ..dermeval.evalformat import DIMENSIONS
from .bench import BenchRow


def round_half_away(value: float, places: int = 3) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def _fmt(value: float, places: int = 3) -> str:
    return f"{round_half_away(value, places):.{places}f}"


def render_bench_markdown(
    rows: list[BenchRow],
    ranking: list[str],
    prompt_hash: str,
    settings_hash: str,
    improvement: dict[str, float] | None = None,
    baseline: str | None = None,
) -> str:
    by_model = {r.model: r for r in rows}
    lines = [
        "# Six-dimension benchmark",
        "",
        f"- judge prompt sha256: `{prompt_hash}`",
        f"- judge settings sha256: `{settings_hash}`",
    ]
    if baseline:
        lines.append(f"- improvement column is relative to `{baseline}`")
    lines.append("")
    header = ["Model", *DIMENSIONS, "Average", "Cases"]
    if improvement:
        header.append("vs baseline")
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for model in ranking:
        row = by_model[model]
        cells = [model]
        cells += [_fmt(row.per_dim[d]) for d in DIMENSIONS]
        cells.append(_fmt(row.average))
        cells.append(str(row.n_cases))
        if improvement:
            cells.append(f"{100.0 * improvement[model]:+.1f}%")
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    return "\n".join(lines)


def render_bench_csv(rows: list[BenchRow], ranking: list[str]) -> str:
    by_model = {r.model: r for r in rows}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", *DIMENSIONS, "average", "n_cases"])
    for model in ranking:
        row = by_model[model]
        writer.writerow(
            [model, *(_fmt(row.per_dim[d]) for d in DIMENSIONS),
             _fmt(row.average), row.n_cases]
        )
    return buf.getvalue()


def render_classify_markdown(accuracies: dict[str, dict[str, float]]) -> str:
    """accuracies: model -> dataset -> percent."""
    datasets = sorted({d for per in accuracies.values() for d in per})
    lines = ["# Zero-shot classification", "",
             "| Model | " + " | ".join(datasets) + " |",
             "|" + "---|" * (len(datasets) + 1)]
    for model in sorted(accuracies):
        cells = [model] + [
            f"{accuracies[model][d]:.2f}%" if d in accuracies[model] else "-"
            for d in datasets
        ]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    return "\n".join(lines)


def render_classify_csv(accuracies: dict[str, dict[str, float]]) -> str:
    datasets = sorted({d for per in accuracies.values() for d in per})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", *datasets])
    for model in sorted(accuracies):
        writer.writerow(
            [model] + [f"{accuracies[model].get(d, float('nan')):.2f}" for d in datasets]
        )
    return buf.getvalue()
