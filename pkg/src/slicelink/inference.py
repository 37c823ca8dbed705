"""Slice-wise table prediction and SQL generation against a backend.

Per question, slices are visited strictly in order: each step's prompt is
built with the same template used at dataset-compilation time, carrying the
tables accumulated so far when the mode calls for it, and each response
extends the predicted set. Questions may run concurrently; output order is
input order regardless of scheduling, and serialized artifacts contain no
wall-clock fields so runs are byte-reproducible.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

from .backends import SQL_CALL_INDEX, Backend
from .errors import BackendError, BackendTransportError
from .schema import DatabaseSchema, render_table
from .sft import (
    NONE_SENTINEL,
    SCHEMA_LINK_SYSTEM,
    SQL_GENERATION_SYSTEM,
    CompileMode,
    QAExample,
    schema_link_user_text,
    sql_generation_user_text,
)
from .slicing import SLICE_JOINER, SliceSet

logger = logging.getLogger(__name__)


class ParsedTables(NamedTuple):
    tables: tuple[str, ...]
    discarded: tuple[str, ...]


@dataclass(frozen=True)
class SliceCall:
    slice_index: int
    raw_response: str | None
    parsed: tuple[str, ...]
    latency: float
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class TablePrediction:
    question_id: str
    predicted_tables: tuple[str, ...]
    per_slice: tuple[SliceCall, ...]
    failed: bool = False


@dataclass(frozen=True)
class SqlPrediction:
    question_id: str
    predicted_sql: str
    context_tables: tuple[str, ...]
    failed: bool = False
    error: str | None = None


@dataclass(frozen=True)
class PipelineResult:
    table: TablePrediction
    sql: SqlPrediction | None = None


def parse_table_response(raw: str, slice_tables: Sequence[str]) -> ParsedTables:
    """Extract table names from a model response, restricted to the slice.

    The exact sentinel "#None#" (after trimming) means no tables. Otherwise
    the text splits on commas and newlines; tokens matching a slice table
    case-insensitively are kept with canonical casing, everything else goes
    to the discard list. Unparseable content degrades to an empty result.
    """
    text = raw.strip()
    if not text or text == NONE_SENTINEL:
        return ParsedTables((), ())
    canonical = {name.lower(): name for name in slice_tables}
    kept: list[str] = []
    seen: set[str] = set()
    discarded: list[str] = []
    for chunk in text.replace("\n", ",").split(","):
        token = chunk.strip()
        if not token:
            continue
        key = token.lower()
        if key in canonical:
            if key not in seen:
                kept.append(canonical[key])
                seen.add(key)
        else:
            discarded.append(token)
    if discarded:
        logger.debug("discarded non-slice tokens %s from response %r", discarded, raw)
    return ParsedTables(tuple(kept), tuple(discarded))


def _call_with_retries(
    backend: Backend,
    messages: Sequence[Mapping[str, str]],
    question_id: str,
    slice_index: int | None,
) -> tuple[str, float]:
    retries = backend.spec.retries
    backoff = backend.spec.backoff
    start = time.perf_counter()
    attempt = 0
    while True:
        try:
            raw = backend.complete(messages, question_id=question_id, slice_index=slice_index)
            return raw, time.perf_counter() - start
        except BackendTransportError:
            if attempt >= retries:
                raise
            delay = backoff * (2**attempt)
            logger.warning(
                "backend call for question '%s' slice %s failed (attempt %d/%d), retrying in %.2fs",
                question_id,
                slice_index,
                attempt + 1,
                retries + 1,
                delay,
            )
            if delay > 0:
                time.sleep(delay)
            attempt += 1


def predict_tables(
    question: str,
    slices: SliceSet,
    backend: Backend,
    mode: CompileMode,
    question_id: str,
) -> TablePrediction:
    """Run the slice loop for one question and assemble the predicted set.

    The loop is strictly sequential: the prompt for slice j carries the
    tables accumulated from slices 0..j-1 when the mode injects context
    (cot_injection trains and infers with it; cot_ablation injects it at
    inference only). A slice whose call keeps failing after retries
    contributes nothing and is recorded as failed.
    """
    mode = CompileMode(mode)
    inject = mode in (CompileMode.COT_INJECTION, CompileMode.COT_ABLATION)
    accumulated: list[str] = []
    seen: set[str] = set()
    calls: list[SliceCall] = []
    for sl in slices.slices:
        selected = list(accumulated) if inject else None
        messages = (
            {"role": "system", "content": SCHEMA_LINK_SYSTEM},
            {"role": "user", "content": schema_link_user_text(question, sl.rendered_text, selected)},
        )
        try:
            raw, latency = _call_with_retries(backend, messages, question_id, sl.slice_index)
        except BackendError as exc:
            logger.error("question '%s' slice %d failed: %s", question_id, sl.slice_index, exc)
            calls.append(
                SliceCall(slice_index=sl.slice_index, raw_response=None, parsed=(), latency=0.0, error=str(exc))
            )
            continue
        parsed = parse_table_response(raw, sl.table_names)
        calls.append(
            SliceCall(
                slice_index=sl.slice_index,
                raw_response=raw,
                parsed=parsed.tables,
                latency=latency,
            )
        )
        for name in parsed.tables:
            if name.lower() not in seen:
                seen.add(name.lower())
                accumulated.append(name)
    failed = bool(calls) and all(c.failed for c in calls)
    return TablePrediction(
        question_id=question_id,
        predicted_tables=tuple(accumulated),
        per_slice=tuple(calls),
        failed=failed,
    )


def strip_sql_response(raw: str) -> str:
    """Code fences removed, then the first ';'-terminated statement."""
    text = raw.strip()
    if text.startswith("```"):
        lines = text.splitlines()
        lines = lines[1:]
        if lines and lines[-1].strip().startswith("```"):
            lines = lines[:-1]
        text = "\n".join(lines).strip()
    cut = _top_level_semicolon(text)
    if cut is not None:
        text = text[:cut]
    return text.strip()


def _top_level_semicolon(text: str) -> int | None:
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c in "'\"":
            j = text.find(c, i + 1)
            if j < 0:
                return None
            i = j + 1
            continue
        if c == ";":
            return i
        i += 1
    return None


def generate_sql(
    question: str,
    predicted: TablePrediction,
    schema: DatabaseSchema,
    backend: Backend,
) -> SqlPrediction:
    """Single SQL-generation call over the predicted tables' renderings.

    Context tables render in schema order. An empty prediction still makes
    the call, with zero table renderings in the prompt.
    """
    predicted_ci = {name.lower() for name in predicted.predicted_tables}
    context = [t for t in schema.tables if t.name.lower() in predicted_ci]
    tables_text = SLICE_JOINER.join(render_table(t) for t in context)
    messages = (
        {"role": "system", "content": SQL_GENERATION_SYSTEM},
        {"role": "user", "content": sql_generation_user_text(question, tables_text)},
    )
    try:
        raw, _latency = _call_with_retries(backend, messages, predicted.question_id, SQL_CALL_INDEX)
    except BackendError as exc:
        logger.error("SQL generation for question '%s' failed: %s", predicted.question_id, exc)
        return SqlPrediction(
            question_id=predicted.question_id,
            predicted_sql="",
            context_tables=tuple(t.name for t in context),
            failed=True,
            error=str(exc),
        )
    sql = strip_sql_response(raw)
    return SqlPrediction(
        question_id=predicted.question_id,
        predicted_sql=sql,
        context_tables=tuple(t.name for t in context),
        failed=not sql,
        error=None if sql else "empty SQL after post-processing",
    )


def run_pipeline(
    examples: Sequence[QAExample],
    slices: SliceSet,
    backend: Backend,
    mode: CompileMode,
    schema: DatabaseSchema | None = None,
    with_sql: bool = False,
    max_inflight: int | None = None,
) -> list[PipelineResult]:
    """Predict tables (and optionally SQL) for a batch of questions.

    Questions run concurrently up to the in-flight limit; within one
    question the slice loop stays sequential. Results come back in input
    order, and one question's failure never aborts the batch.
    """
    if with_sql and schema is None:
        raise ValueError("with_sql requires the schema")
    limit = max_inflight if max_inflight is not None else backend.spec.max_inflight

    def run_one(example: QAExample) -> PipelineResult:
        prediction = predict_tables(
            example.question, slices, backend, mode, question_id=example.question_id
        )
        sql = None
        if with_sql and not prediction.failed:
            assert schema is not None
            sql = generate_sql(example.question, prediction, schema, backend)
        return PipelineResult(table=prediction, sql=sql)

    if limit <= 1:
        return [run_one(e) for e in examples]
    with ThreadPoolExecutor(max_workers=limit) as pool:
        return list(pool.map(run_one, examples))


def mean_question_latency(results: Sequence[PipelineResult]) -> float:
    """Mean summed per-question backend latency, in seconds."""
    if not results:
        return 0.0
    totals = [sum(c.latency for c in r.table.per_slice) for r in results]
    return sum(totals) / len(totals)


def table_prediction_to_dict(prediction: TablePrediction) -> dict:
    # Latency is deliberately absent: serialized artifacts must not depend
    # on wall clock or scheduling.
    per_slice = []
    for call in prediction.per_slice:
        entry: dict = {"slice_index": call.slice_index}
        if call.failed:
            entry["error"] = call.error
        else:
            entry["raw_response"] = call.raw_response
            entry["parsed"] = list(call.parsed)
        per_slice.append(entry)
    out: dict = {
        "question_id": prediction.question_id,
        "predicted_tables": list(prediction.predicted_tables),
        "per_slice": per_slice,
    }
    if prediction.failed:
        out["failed"] = True
    return out


def write_table_predictions(path: str | Path, results: Sequence[PipelineResult]) -> None:
    lines = [json.dumps(table_prediction_to_dict(r.table), ensure_ascii=False) for r in results]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_sql_predictions(path: str | Path, results: Sequence[PipelineResult]) -> None:
    lines = []
    for r in results:
        if r.sql is None:
            continue
        entry: dict = {"question_id": r.sql.question_id, "predicted_sql": r.sql.predicted_sql}
        if r.sql.failed:
            entry["failed"] = True
        lines.append(json.dumps(entry, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_table_predictions(path: str | Path) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def read_sql_predictions(path: str | Path) -> list[dict]:
    return read_table_predictions(path)
