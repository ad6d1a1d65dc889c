"""Result tables, machine-readable records, and ROC CSV/SVG output."""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigError, DataError
from .metrics import MetricsReport
from .training import SweepRow, TrainLog

WITH_ATTENTION = "InceptionCapsule with self-Attention"
WITHOUT_ATTENTION = "InceptionCapsule without self-Attention"

# (header, report attribute) per column
LAYOUTS = {
    "ablation": [("Accuracy (%)", "accuracy"), ("Sensitivity (%)", "sensitivity"),
                 ("Specificity (%)", "specificity")],
    "full": [("Accuracy", "accuracy"), ("Specificity", "specificity"), ("Precision", "precision"),
             ("Sensitivity", "sensitivity"), ("F1-score", "f1")],
}

FORMATS = ("text", "kv", "records", "roc_csv", "roc_svg")


def render_table(rows: Sequence[tuple[str, Mapping[str, float] | MetricsReport]],
                 layout: str = "ablation") -> str:
    """Tab-separated table with percentages at two decimals; missing values print as ``-``."""
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown table layout {layout!r}")
    cols = LAYOUTS[layout]
    lines = ["\t".join(["Model", *(h for h, _ in cols)])]
    for name, values in rows:
        if isinstance(values, MetricsReport):
            values = {key: getattr(values, key) for _, key in cols}
        cells = [name]
        for _, key in cols:
            v = values.get(key)
            cells.append("-" if v is None else f"{100.0 * v:.2f}")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def render_kv(report: MetricsReport) -> str:
    out = []
    for key in ("n_classes", "total", "accuracy", "precision", "recall", "sensitivity",
                "specificity", "f1", "auc"):
        out.append(f"{key} = {getattr(report, key)}")
    for key, values in report.per_class.items():
        for k, v in enumerate(values):
            out.append(f"{key}.{k} = {v}")
    for k, a in enumerate(report.auc_per_class):
        out.append(f"auc.{k} = {a}")
    return "\n".join(out) + "\n"


def render_roc_csv(curves: Sequence[Sequence[tuple[float, float]] | None]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "fpr", "tpr"])
    for k, curve in enumerate(curves):
        for fpr, tpr in curve or []:
            w.writerow([k, repr(float(fpr)), repr(float(tpr))])
    return buf.getvalue()


_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")


def render_roc_svg(curves: Sequence[Sequence[tuple[float, float]] | None], size: int = 320) -> str:
    pad = 30
    span = size - 2 * pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#000"/>',
             f'<line x1="{pad}" y1="{pad + span}" x2="{pad + span}" y2="{pad}" '
             'stroke="#999" stroke-dasharray="4 3"/>']
    for k, curve in enumerate(curves):
        if not curve:
            continue
        pts = " ".join(f"{pad + fpr * span:.2f},{pad + (1 - tpr) * span:.2f}" for fpr, tpr in curve)
        parts.append(f'<polyline fill="none" stroke="{_COLOURS[k % len(_COLOURS)]}" '
                     f'stroke-width="1.5" points="{pts}"><title>class {k}</title></polyline>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def records(report: MetricsReport, log: TrainLog | None = None) -> dict:
    return {"report": report.to_dict(), "log": None if log is None else log.to_dict()}


def load_records(path: str | os.PathLike) -> tuple[MetricsReport, TrainLog | None]:
    try:
        d = json.loads(Path(path).read_text())
        report = MetricsReport.from_dict(d["report"])
        log = None if d.get("log") is None else TrainLog.from_dict(d["log"])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DataError(f"{path}: not a records file ({e})") from e
    return report, log


def emit_report(report: MetricsReport, log: TrainLog | None, fmt: str, path: str | os.PathLike,
                model_name: str = WITH_ATTENTION, layout: str = "ablation") -> Path:
    if fmt == "text":
        body = render_table([(model_name, report)], layout)
    elif fmt == "kv":
        body = render_kv(report)
    elif fmt == "records":
        body = json.dumps(records(report, log), indent=1, sort_keys=True) + "\n"
    elif fmt == "roc_csv":
        body = render_roc_csv(report.roc)
    elif fmt == "roc_svg":
        body = render_roc_svg(report.roc)
    else:
        raise ConfigError(f"unknown report format {fmt!r}; choose one of {FORMATS}")
    path = Path(path)
    try:
        path.write_text(body)
    except OSError as e:
        raise DataError(f"cannot write report to {path}: {e}") from e
    return path


def render_sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    keys = ("accuracy", "precision", "recall", "sensitivity", "specificity", "f1", "auc")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["batch_size", *keys])
    for row in rows:
        w.writerow([row.batch_size, *(getattr(row.report, k) for k in keys)])
    return buf.getvalue()
