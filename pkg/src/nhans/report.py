"""Rendering for metric reports: aligned text, CSV rows, and charts.

PESQ is not computed anywhere in this library; every rendering carries
an explicit "n/a" column for it rather than omitting it silently.
"""

from __future__ import annotations

from pathlib import Path

from .metrics import MetricReport

_PRECISION = {"stoi": 3}
_DEFAULT_PRECISION = 2


def _format_value(metric: str, value) -> str:
    if metric == "pesq" or value is None:
        return "n/a"
    return f"{value:.{_PRECISION.get(metric, _DEFAULT_PRECISION)}f}"


def _format_group(group) -> str:
    if isinstance(group, tuple):
        return "/".join(str(g) for g in group)
    return str(group)


def render_table(sections: dict[str, MetricReport]) -> str:
    """Aligned text table; one block per section (e.g. enhanced, baseline)."""
    metrics: list[str] = []
    for report in sections.values():
        for name in report.metric_names():
            if name not in metrics:
                metrics.append(name)
    if "pesq" not in metrics:
        # keep the column visible even though nothing produces it
        insert_at = metrics.index("stoi") + 1 if "stoi" in metrics else len(metrics)
        metrics.insert(insert_at, "pesq")

    grouping = next(iter(sections.values())).grouping
    rows = []
    for label, report in sections.items():
        for group, values in report.groups.items():
            row = [label, _format_group(group)]
            row += [_format_value(m, values.get(m)) for m in metrics]
            row.append(str(report.counts[group]))
            rows.append(row)

    header = ["section", grouping, *metrics, "pairs"]
    widths = [
        max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))
    ]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_csv(report: MetricReport, path) -> None:
    """Machine-readable rows: group,metric,value."""
    lines = ["group,metric,value"]
    for group, values in report.groups.items():
        for metric, value in values.items():
            lines.append(f"{_format_group(group)},{metric},{value!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def render_figures(sections: dict[str, MetricReport], out_dir,
                   prefix: str = "metric") -> list[str]:
    """One chart per metric comparing sections across groups; returns paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    metrics: list[str] = []
    for report in sections.values():
        for name in report.metric_names():
            if name != "pesq" and name not in metrics:
                metrics.append(name)

    group_labels: list[str] = []
    for report in sections.values():
        for group in report.groups:
            label = _format_group(group)
            if label not in group_labels:
                group_labels.append(label)
    x = range(len(group_labels))

    grouping = next(iter(sections.values())).grouping
    written = []
    for metric in metrics:
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for label, report in sections.items():
            series = {
                _format_group(g): v.get(metric) for g, v in report.groups.items()
            }
            ys = [series.get(gl) for gl in group_labels]
            ax.plot(x, ys, marker="o", label=label)
        ax.set_xticks(list(x))
        ax.set_xticklabels(group_labels)
        ax.set_xlabel(grouping)
        ax.set_ylabel(metric)
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"{prefix}_{metric}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(str(path))
    return written


def write_report(sections: dict[str, MetricReport], out_dir,
                 figures: bool = True) -> dict:
    """Write report.txt plus one CSV per section, and optionally charts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    table_path = out_dir / "report.txt"
    table_path.write_text(render_table(sections))

    outputs = {"table": str(table_path), "csv": {}, "figures": []}
    for label, report in sections.items():
        csv_path = out_dir / f"{label}.csv"
        write_csv(report, csv_path)
        outputs["csv"][label] = str(csv_path)
    if figures:
        outputs["figures"] = render_figures(sections, out_dir)
    return outputs
