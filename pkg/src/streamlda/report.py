"""Render run results to machine-parseable text.

Reports are flat ``key=value`` lines (one per field, ``#`` comments allowed);
tables are tab-separated with a header row. Floats are written with repr so
files round-trip exactly and identical runs produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

from .engine import StreamOutcome
from .metrics import (
    AccuracyResult,
    CalibrationRow,
    RunReport,
    SweepRow,
    TaskCheckpoint,
)

__all__ = [
    "calibration_table",
    "checkpoints_table",
    "outcomes_table",
    "parse_kv",
    "render_accuracy",
    "render_report",
    "sweep_table",
    "write_text",
]


def _fmt(value) -> str:
    if value is None:
        return "na"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_report(report: RunReport, context: dict | None = None) -> str:
    """Flatten a run report to key=value lines.

    ``context`` entries (method, seeds, paths) are emitted first under their
    own keys; the stream manifest is embedded as one JSON-encoded line.
    """
    lines = ["# streamlda run report"]
    for key, value in (context or {}).items():
        lines.append(f"{key}={_fmt(value)}")
    t = report.tally
    pairs = [
        ("n_samples", report.n_samples),
        ("tp", t.tp),
        ("fp", t.fp),
        ("fn", t.fn),
        ("tn", t.tn),
        ("precision", report.precision),
        ("recall", report.recall),
        ("f_score", report.f_score),
        ("degenerate_f", report.degenerate_f),
        ("asks", report.asks),
        ("asks_yielding_new", report.asks_yielding_new),
        ("created", report.created),
        ("updated", report.updated),
        ("promoted", report.promoted),
        ("classes_initial", report.classes_initial),
        ("classes_promoted", report.classes_promoted),
        ("classes_emerging", report.classes_emerging),
        ("total_accuracy", report.total_accuracy),
        ("id_accuracy", report.id_accuracy),
        ("ood_accuracy", report.ood_accuracy),
        ("emerging_targets_in_eval", report.emerging_targets_in_eval),
    ]
    lines.extend(f"{k}={_fmt(v)}" for k, v in pairs)
    if report.manifest is not None:
        lines.append(f"manifest={json.dumps(report.manifest, sort_keys=True)}")
    return "\n".join(lines) + "\n"


def render_accuracy(acc: AccuracyResult, context: dict | None = None) -> str:
    lines = ["# streamlda accuracy report"]
    for key, value in (context or {}).items():
        lines.append(f"{key}={_fmt(value)}")
    pairs = [
        ("n_total", acc.n_total),
        ("n_id", acc.n_id),
        ("n_ood", acc.n_ood),
        ("correct_total", acc.correct_total),
        ("id_correct", acc.id_correct),
        ("ood_correct", acc.ood_correct),
        ("total_accuracy", acc.total),
        ("id_accuracy", acc.id_accuracy),
        ("ood_accuracy", acc.ood_accuracy),
    ]
    lines.extend(f"{k}={_fmt(v)}" for k, v in pairs)
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict[str, str]:
    """Parse key=value lines; blank lines and # comments are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _table(header: list[str], rows: list[list]) -> str:
    lines = ["\t".join(header)]
    lines.extend("\t".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def outcomes_table(outcomes: list[StreamOutcome]) -> str:
    """Per-sample outcome log as TSV, in stream order."""
    rows = [
        [
            pos,
            o.index,
            o.decision.verdict.value,
            o.decision.reason.value,
            o.decision.predicted_class,
            o.decision.confidence,
            o.asked,
            o.oracle_label,
            o.mutation.value,
            o.ground_truth_ood,
            o.oracle_failed,
        ]
        for pos, o in enumerate(outcomes)
    ]
    return _table(
        [
            "position",
            "index",
            "verdict",
            "reason",
            "predicted",
            "confidence",
            "asked",
            "oracle_label",
            "mutation",
            "ground_truth_ood",
            "oracle_failed",
        ],
        rows,
    )


def checkpoints_table(checkpoints: tuple[TaskCheckpoint, ...]) -> str:
    rows = [
        [c.task, c.end, c.precision, c.recall, c.f_score, c.asks, c.asks_yielding_new, c.classes_known]
        for c in checkpoints
    ]
    return _table(
        ["task", "end", "precision", "recall", "f_score", "asks", "asks_yielding_new", "classes_known"],
        rows,
    )


def sweep_table(rows: list[SweepRow]) -> str:
    body = [
        [
            r.th,
            r.precision,
            r.recall,
            r.f_score,
            r.asks,
            r.asks_yielding_new,
            r.total_accuracy,
            r.id_accuracy,
            r.ood_accuracy,
        ]
        for r in rows
    ]
    return _table(
        [
            "th",
            "precision",
            "recall",
            "f_score",
            "asks",
            "asks_yielding_new",
            "total_accuracy",
            "id_accuracy",
            "ood_accuracy",
        ],
        body,
    )


def calibration_table(rows: list[CalibrationRow]) -> str:
    body = [[r.threshold, r.precision, r.recall, r.f_score, r.asks] for r in rows]
    return _table(["threshold", "precision", "recall", "f_score", "asks"], body)


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
