"""Table-prediction and SQL metrics.

Table metrics over (predicted, gold) set pairs, macro-averaged:

- total_accuracy: fraction of questions with predicted == gold.
- filtered_accuracy: fraction with predicted a superset of gold.
- average_precision: mean of |predicted & gold| / |predicted|; defined as 1
  when both sides are empty and 0 when only the prediction is empty.
- average_recall: mean of |predicted & gold| / |gold|; an empty gold set
  counts as fully recalled.

SQL metrics: exact_match is normalized string equality (not component
decomposition, a documented divergence); execution_accuracy compares result
multisets on an embedded SQLite engine, order-sensitively when the gold
query has a top-level ORDER BY.
"""

from __future__ import annotations

import json
import logging
import re
import sqlite3
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import GoldExecutionError, JoinError, SlicelinkError
from .sft import QAExample

logger = logging.getLogger(__name__)

REPORT_NOTES = (
    "exact_match is normalized SQL string equality, not component decomposition",
    "average precision and recall are macro-averaged per question",
)


@dataclass(frozen=True)
class TableMetrics:
    total_accuracy: float
    filtered_accuracy: float
    average_precision: float
    average_recall: float
    n_questions: int


@dataclass(frozen=True)
class ExecVerdict:
    match: bool
    error: str | None = None


@dataclass(frozen=True)
class SqlVerdict:
    question_id: str
    exact_match: bool
    execution_match: bool | None
    error: str | None = None


@dataclass(frozen=True)
class SqlMetrics:
    exact_match: float
    execution_accuracy: float | None
    verdicts: tuple[SqlVerdict, ...]


@dataclass(frozen=True)
class MetricsReport:
    table_metrics: TableMetrics
    sql_metrics: SqlMetrics | None
    config: dict
    timing: dict
    notes: tuple[str, ...] = REPORT_NOTES


def table_metrics(pairs: Sequence[tuple[Iterable[str], Iterable[str]]]) -> TableMetrics:
    """Compute the four table-prediction ratios over set pairs.

    Names compare case-insensitively. Raises ValueError on an empty list.
    """
    if not pairs:
        raise ValueError("cannot compute table metrics over zero questions")
    n = len(pairs)
    total = 0
    filtered = 0
    precision_sum = 0.0
    recall_sum = 0.0
    for predicted_raw, gold_raw in pairs:
        predicted = {name.lower() for name in predicted_raw}
        gold = {name.lower() for name in gold_raw}
        hit = len(predicted & gold)
        if predicted == gold:
            total += 1
        if predicted >= gold:
            filtered += 1
        if predicted:
            precision_sum += hit / len(predicted)
        elif not gold:
            precision_sum += 1.0
        recall_sum += hit / len(gold) if gold else 1.0
    return TableMetrics(
        total_accuracy=total / n,
        filtered_accuracy=filtered / n,
        average_precision=precision_sum / n,
        average_recall=recall_sum / n,
        n_questions=n,
    )


def normalize_sql(sql: str) -> str:
    """Case-fold outside quoted literals, collapse whitespace, strip a
    trailing semicolon, and canonicalize literal quoting to single quotes."""
    text = sql.strip()
    while text.endswith(";"):
        text = text[:-1].rstrip()
    out: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c in "'\"":
            content, i = _read_literal(text, i)
            out.append("'" + content.replace("'", "''") + "'")
            continue
        if c.isspace():
            while i < n and text[i].isspace():
                i += 1
            out.append(" ")
            continue
        out.append(c.lower())
        i += 1
    return "".join(out).strip()


def _read_literal(text: str, start: int) -> tuple[str, int]:
    quote = text[start]
    content: list[str] = []
    i = start + 1
    n = len(text)
    while i < n:
        if text[i] == quote:
            if i + 1 < n and text[i + 1] == quote:
                content.append(quote)
                i += 2
                continue
            return "".join(content), i + 1
        content.append(text[i])
        i += 1
    return "".join(content), n


def exact_match(pred_sql: str, gold_sql: str) -> bool:
    """Normalized textual equality of two SQL strings."""
    return normalize_sql(pred_sql) == normalize_sql(gold_sql)


def _mask_nested(sql: str) -> str:
    """Blank out quoted literals and parenthesized regions for keyword scans."""
    out = []
    depth = 0
    i = 0
    n = len(sql)
    while i < n:
        c = sql[i]
        if c in "'\"":
            _content, j = _read_literal(sql, i)
            out.append(" " * (j - i))
            i = j
            continue
        if c == "(":
            depth += 1
        elif c == ")":
            depth = max(0, depth - 1)
            out.append(" ")
            i += 1
            continue
        out.append(c if depth == 0 else " ")
        i += 1
    return "".join(out)


def has_top_level_order_by(sql: str) -> bool:
    return re.search(r"\border\s+by\b", _mask_nested(sql), re.IGNORECASE) is not None


def execution_accuracy(
    pred_sql: str,
    gold_sql: str,
    db: str | Path,
    timeout_s: float = 5.0,
) -> ExecVerdict:
    """Execute both queries against a SQLite file and compare results.

    Result rows compare as multisets (duplicates significant); when the
    gold query has a top-level ORDER BY, row order must match too. A
    prediction that errors or exceeds the timeout is a non-match carrying
    the engine's message; a failing gold query is a fixture error.
    """
    db = Path(db)
    if not db.is_file():
        raise SlicelinkError(f"database file not found: {db}")
    conn = sqlite3.connect(db)
    try:
        try:
            gold_rows = conn.execute(gold_sql).fetchall()
        except sqlite3.Error as exc:
            raise GoldExecutionError(f"gold SQL failed on {db.name}: {exc}") from exc

        deadline = time.monotonic() + timeout_s

        def check_deadline() -> int:
            return 1 if time.monotonic() > deadline else 0

        conn.set_progress_handler(check_deadline, 1000)
        try:
            pred_rows = conn.execute(pred_sql).fetchall()
        except sqlite3.Error as exc:
            return ExecVerdict(match=False, error=str(exc))
        finally:
            conn.set_progress_handler(None, 0)
    finally:
        conn.close()

    if has_top_level_order_by(gold_sql):
        return ExecVerdict(match=pred_rows == gold_rows)
    return ExecVerdict(match=Counter(pred_rows) == Counter(gold_rows))


def resolve_db_file(db_dir: str | Path, db_id: str) -> Path:
    """Locate a database file for db_id under a directory."""
    root = Path(db_dir)
    for candidate in (
        root / f"{db_id}.sqlite",
        root / db_id / f"{db_id}.sqlite",
        root / f"{db_id}.db",
    ):
        if candidate.is_file():
            return candidate
    raise SlicelinkError(f"no database file for '{db_id}' under {root}")


def build_report(
    table_predictions: Sequence[Mapping],
    gold: Sequence[QAExample],
    sql_predictions: Sequence[Mapping] | None = None,
    db_dir: str | Path | None = None,
    config: Mapping | None = None,
    timing: Mapping | None = None,
) -> MetricsReport:
    """Join predictions with gold by question_id and compute both families.

    Every prediction must have a gold row and vice versa; anything
    unmatched raises JoinError naming the ids. Given fixed inputs the
    report serializes byte-identically.
    """
    gold_by_id = {e.question_id: e for e in gold}
    pred_ids = [str(p["question_id"]) for p in table_predictions]
    missing_gold = [qid for qid in pred_ids if qid not in gold_by_id]
    if missing_gold:
        raise JoinError("predictions with no gold entry", missing_gold)
    missing_pred = [qid for qid in gold_by_id if qid not in set(pred_ids)]
    if missing_pred:
        raise JoinError("gold entries with no prediction", missing_pred)

    pairs = [
        (tuple(p.get("predicted_tables", ())), gold_by_id[str(p["question_id"])].gold_tables)
        for p in table_predictions
    ]
    table = table_metrics(pairs)

    sql_metrics_value: SqlMetrics | None = None
    if sql_predictions is not None:
        verdicts: list[SqlVerdict] = []
        for p in sql_predictions:
            qid = str(p["question_id"])
            example = gold_by_id.get(qid)
            if example is None:
                raise JoinError("SQL predictions with no gold entry", [qid])
            pred_sql = str(p.get("predicted_sql", ""))
            if p.get("failed") or not pred_sql:
                verdicts.append(
                    SqlVerdict(qid, exact_match=False, execution_match=False if db_dir else None,
                               error="generation failure")
                )
                continue
            em = exact_match(pred_sql, example.gold_sql)
            ex: bool | None = None
            error = None
            if db_dir is not None:
                verdict = execution_accuracy(pred_sql, example.gold_sql, resolve_db_file(db_dir, example.db_id))
                ex = verdict.match
                error = verdict.error
            verdicts.append(SqlVerdict(qid, exact_match=em, execution_match=ex, error=error))
        n = len(verdicts)
        em_rate = sum(v.exact_match for v in verdicts) / n if n else 0.0
        ex_rate = None
        if db_dir is not None and n:
            ex_rate = sum(bool(v.execution_match) for v in verdicts) / n
        sql_metrics_value = SqlMetrics(
            exact_match=em_rate, execution_accuracy=ex_rate, verdicts=tuple(verdicts)
        )

    return MetricsReport(
        table_metrics=table,
        sql_metrics=sql_metrics_value,
        config=dict(config or {}),
        timing=dict(timing or {}),
    )


def report_to_dict(report: MetricsReport) -> dict:
    out: dict = {
        "notes": list(report.notes),
        "config": report.config,
        "table_metrics": {
            "total_accuracy": report.table_metrics.total_accuracy,
            "filtered_accuracy": report.table_metrics.filtered_accuracy,
            "average_precision": report.table_metrics.average_precision,
            "average_recall": report.table_metrics.average_recall,
            "n_questions": report.table_metrics.n_questions,
        },
        "sql_metrics": None,
        "timing": report.timing,
    }
    if report.sql_metrics is not None:
        out["sql_metrics"] = {
            "exact_match": report.sql_metrics.exact_match,
            "execution_accuracy": report.sql_metrics.execution_accuracy,
            "verdicts": [
                {
                    "question_id": v.question_id,
                    "exact_match": v.exact_match,
                    "execution_match": v.execution_match,
                    "error": v.error,
                }
                for v in report.sql_metrics.verdicts
            ],
        }
    return out


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report_to_dict(report), ensure_ascii=False, indent=2) + "\n"


def format_report(report: MetricsReport) -> str:
    """Human-readable aligned-column rendering of a report."""
    lines = [f"Table metrics (n={report.table_metrics.n_questions})"]
    rows = [
        ("total_accuracy", report.table_metrics.total_accuracy),
        ("filtered_accuracy", report.table_metrics.filtered_accuracy),
        ("average_precision", report.table_metrics.average_precision),
        ("average_recall", report.table_metrics.average_recall),
    ]
    width = max(len(name) for name, _ in rows)
    lines.extend(f"  {name.ljust(width)}  {value:.4f}" for name, value in rows)
    if report.sql_metrics is not None:
        lines.append(f"SQL metrics (n={len(report.sql_metrics.verdicts)})")
        sql_rows: list[tuple[str, float]] = [("exact_match", report.sql_metrics.exact_match)]
        if report.sql_metrics.execution_accuracy is not None:
            sql_rows.append(("execution_accuracy", report.sql_metrics.execution_accuracy))
        sql_width = max(len(name) for name, _ in sql_rows)
        lines.extend(f"  {name.ljust(sql_width)}  {value:.4f}" for name, value in sql_rows)
    lines.append("Notes:")
    lines.extend(f"  - {note}" for note in report.notes)
    return "\n".join(lines) + "\n"
