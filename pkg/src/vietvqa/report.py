"""Report rendering: aligned text tables, delimited per-item output, and metric figures.

When an output directory is given, the eval/ablate report path writes report.csv,
report.jsonl, and report.txt alongside a rendered report.png bar chart.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from .errors import DataFormatError
from .evalkit import ItemScores, METRIC_COLUMNS, MetricReport

TABLE_COLUMNS = ("Method/config", "BLEU-4", "Cultural Accuracy", "Explanation Quality")
_TABLE_METRICS = ("bleu4", "cultural_accuracy", "explanation_quality")

FIGURE_METRIC_LABELS = {
    "bleu4": "BLEU-4",
    "cultural_accuracy": "Cultural Accuracy",
    "explanation_quality": "Explanation Quality",
}


def format_report_table(reports: Sequence[MetricReport]) -> str:
    """Aligned plain-text table, one row per configuration."""
    rows = [TABLE_COLUMNS]
    for report in reports:
        rows.append(
            (
                report.config,
                f"{report.aggregate['bleu4']:.3f}",
                f"{report.aggregate['cultural_accuracy']:.3f}",
                f"{report.aggregate['explanation_quality']:.3f}",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def report_to_lines(report: MetricReport) -> list[str]:
    """Line-delimited JSON: one item line per scored item plus one aggregate line."""
    lines = []
    for item in report.per_item:
        lines.append(
            json.dumps(
                {
                    "type": "item",
                    "config": report.config,
                    "item_id": item.item_id,
                    "bleu4": round(item.bleu4, 9),
                    "rouge_l": round(item.rouge_l, 9),
                    "meteor_lite": round(item.meteor_lite, 9),
                    "cultural_accuracy": round(item.cultural_accuracy, 9),
                    "explanation_quality": round(item.explanation_quality, 9),
                    "error": item.error,
                },
                ensure_ascii=False,
            )
        )
    lines.append(
        json.dumps(
            {
                "type": "aggregate",
                "config": report.config,
                "n": report.n,
                **{column: round(report.aggregate[column], 9) for column in METRIC_COLUMNS},
            },
            ensure_ascii=False,
        )
    )
    return lines


def load_report_lines(path) -> list[MetricReport]:
    """Parse report.jsonl back into MetricReport objects (loader for our own output)."""
    per_config: dict[str, list[ItemScores]] = {}
    aggregates: dict[str, dict] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {line_no}: malformed report line: {exc}") from exc
            config = obj.get("config", "full")
            if config not in per_config:
                per_config[config] = []
                order.append(config)
            if obj.get("type") == "item":
                per_config[config].append(
                    ItemScores(
                        item_id=obj["item_id"],
                        bleu4=obj["bleu4"],
                        rouge_l=obj["rouge_l"],
                        meteor_lite=obj["meteor_lite"],
                        cultural_accuracy=obj["cultural_accuracy"],
                        explanation_quality=obj["explanation_quality"],
                        error=obj.get("error", ""),
                    )
                )
            elif obj.get("type") == "aggregate":
                aggregates[config] = {column: obj[column] for column in METRIC_COLUMNS}
            else:
                raise DataFormatError(f"line {line_no}: unknown report line type")
    reports = []
    for config in order:
        items = tuple(per_config[config])
        aggregate = aggregates.get(
            config, {column: 0.0 for column in METRIC_COLUMNS}
        )
        reports.append(
            MetricReport(config=config, per_item=items, aggregate=aggregate, n=len(items))
        )
    return reports


def render_metric_figure(reports: Sequence[MetricReport], path) -> None:
    """Grouped bar chart of the headline metrics, one bar group per configuration."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    n_groups = len(_TABLE_METRICS)
    n_bars = max(len(reports), 1)
    bar_width = 0.8 / n_bars
    for offset, report in enumerate(reports):
        positions = [g + offset * bar_width for g in range(n_groups)]
        values = [report.aggregate[m] for m in _TABLE_METRICS]
        ax.bar(positions, values, width=bar_width, label=report.config)
    ax.set_xticks([g + 0.4 - bar_width / 2 for g in range(n_groups)])
    ax.set_xticklabels([FIGURE_METRIC_LABELS[m] for m in _TABLE_METRICS])
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("Score")
    ax.legend(title="Configuration", fontsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report_files(reports: Sequence[MetricReport], out_dir) -> dict[str, Path]:
    """Write the full report bundle into a directory; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "jsonl": out / "report.jsonl",
        "csv": out / "report.csv",
        "txt": out / "report.txt",
        "png": out / "report.png",
    }
    lines = []
    for report in reports:
        lines.extend(report_to_lines(report))
    paths["jsonl"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    with paths["csv"].open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("config", "item_id", *METRIC_COLUMNS, "error"))
        for report in reports:
            for item in report.per_item:
                writer.writerow(
                    (
                        report.config,
                        item.item_id,
                        *(f"{getattr(item, column):.9f}" for column in METRIC_COLUMNS),
                        item.error,
                    )
                )
    paths["txt"].write_text(format_report_table(reports), encoding="utf-8")
    render_metric_figure(reports, paths["png"])
    return paths
