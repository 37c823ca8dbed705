"""Compilation of schema-link and SQL-generation training datasets.

Each schema-link record pairs a question with one slice of the database;
the assistant text is the comma-joined gold tables present in that slice,
or the sentinel "#None#" when there are none. In cot_injection mode the
user context also carries the gold tables already covered by earlier
slices, and every positive record gets a balancing duplicate without that
context. The records for an external trainer are emitted as chat-format
JSONL or role-tagged text.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import CompileError, ParseError
from .schema import DatabaseSchema, render_table
from .slicing import SLICE_JOINER, SliceSet

logger = logging.getLogger(__name__)

NONE_SENTINEL = "#None#"
EMPTY_SELECTED = "(none yet)"

SCHEMA_LINK_SYSTEM = (
    "You are a database assistant. From the given tables, list the table names "
    "relevant to the question, or answer #None#."
)
SQL_GENERATION_SYSTEM = (
    "You are a database assistant. Write one SQL query that answers the question "
    "using the given tables."
)


class CompileMode(str, Enum):
    COT_INJECTION = "cot_injection"
    NO_COT = "no_cot"
    COT_ABLATION = "cot_ablation"


class TemplateDialect(str, Enum):
    GENERIC_CHAT_JSONL = "generic-chat-jsonl"
    ROLE_TAGGED_TEXT = "role-tagged-text"


@dataclass(frozen=True)
class QAExample:
    question_id: str
    question: str
    gold_tables: tuple[str, ...]
    gold_sql: str
    db_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_tables", tuple(self.gold_tables))
        if not self.question_id:
            raise ValueError("question_id must be non-empty")
        if not self.gold_tables:
            raise ValueError(f"question '{self.question_id}' has no gold tables")
        if not self.gold_sql:
            raise ValueError(f"question '{self.question_id}' has no gold SQL")


@dataclass(frozen=True)
class RecordMeta:
    question_id: str
    slice_index: int | None
    mode: str
    is_balancing_duplicate: bool = False


@dataclass(frozen=True)
class SftRecord:
    system: str
    user: str
    assistant: str
    meta: RecordMeta


def schema_link_user_text(question: str, slice_text: str, selected: Sequence[str] | None) -> str:
    """User context for one schema-link step.

    ``selected`` is the already-covered table list; None omits the line
    entirely (no_cot and balancing duplicates), an empty sequence renders
    the placeholder so the template shape stays constant.
    """
    text = f"Question: {question}\nTables:\n{slice_text}"
    if selected is not None:
        shown = ", ".join(selected) if selected else EMPTY_SELECTED
        text += f"\nKnown relevant tables: {shown}"
    return text


def sql_generation_user_text(question: str, tables_text: str) -> str:
    return f"Question: {question}\nTables:\n{tables_text}"


def compile_schema_link(
    examples: Sequence[QAExample],
    slices: SliceSet,
    mode: CompileMode,
) -> list[SftRecord]:
    """Emit one record per (example, slice), in example-major order.

    cot_injection adds the covered-tables line to the user context and a
    balancing duplicate (same slice, no covered-tables line) right after
    every positive record. no_cot and cot_ablation compile identically:
    plain records, no duplicates.
    """
    mode = CompileMode(mode)
    slice_tables_ci = [{name.lower(): name for name in sl.table_names} for sl in slices.slices]
    records: list[SftRecord] = []
    for example in examples:
        _check_gold_resolve(example, slice_tables_ci)
        selected: list[str] = []
        for sl in slices.slices:
            lookup = slice_tables_ci[sl.slice_index]
            gold_here = [
                lookup[g.lower()] for g in _slice_order_gold(example, sl.table_names)
            ]
            assistant = ", ".join(gold_here) if gold_here else NONE_SENTINEL
            inject = selected if mode is CompileMode.COT_INJECTION else None
            records.append(
                SftRecord(
                    system=SCHEMA_LINK_SYSTEM,
                    user=schema_link_user_text(example.question, sl.rendered_text, inject),
                    assistant=assistant,
                    meta=RecordMeta(
                        question_id=example.question_id,
                        slice_index=sl.slice_index,
                        mode=mode.value,
                    ),
                )
            )
            if mode is CompileMode.COT_INJECTION and gold_here:
                records.append(
                    SftRecord(
                        system=SCHEMA_LINK_SYSTEM,
                        user=schema_link_user_text(example.question, sl.rendered_text, None),
                        assistant=assistant,
                        meta=RecordMeta(
                            question_id=example.question_id,
                            slice_index=sl.slice_index,
                            mode=mode.value,
                            is_balancing_duplicate=True,
                        ),
                    )
                )
            selected.extend(gold_here)
    return records


def _slice_order_gold(example: QAExample, slice_table_names: Sequence[str]) -> list[str]:
    gold_ci = {g.lower() for g in example.gold_tables}
    return [name for name in slice_table_names if name.lower() in gold_ci]


def _check_gold_resolve(example: QAExample, slice_tables_ci: list[dict[str, str]]) -> None:
    for gold in example.gold_tables:
        hits = sum(1 for lookup in slice_tables_ci if gold.lower() in lookup)
        if hits == 0:
            raise CompileError(
                f"question '{example.question_id}': gold table '{gold}' appears in no slice"
            )
        if hits > 1:
            raise CompileError(
                f"question '{example.question_id}': gold table '{gold}' appears in {hits} slices"
            )


def compile_sql_generation(
    examples: Sequence[QAExample],
    schema: DatabaseSchema,
    noise_tables: int = 2,
    seed: int = 0,
    predicted: Mapping[str, Sequence[str]] | None = None,
) -> list[SftRecord]:
    """One record per example: question plus rendered context tables.

    Context tables are the gold tables united with either ``noise_tables``
    seeded-random non-gold tables or, when ``predicted`` maps question ids
    to table lists, those explicit predictions. Context renders in schema
    order; sampling is deterministic per (seed, question_id).
    """
    if noise_tables < 0:
        raise ValueError("noise_tables must be >= 0")
    records: list[SftRecord] = []
    for example in examples:
        chosen_ci = set()
        for gold in example.gold_tables:
            if schema.find_table(gold) is None:
                raise CompileError(
                    f"question '{example.question_id}': gold table '{gold}' not in schema '{schema.db_id}'"
                )
            chosen_ci.add(gold.lower())
        if predicted is not None:
            for name in predicted.get(example.question_id, ()):
                if schema.find_table(name) is not None:
                    chosen_ci.add(name.lower())
                else:
                    logger.warning(
                        "question '%s': predicted table '%s' not in schema, dropped",
                        example.question_id,
                        name,
                    )
        else:
            non_gold = [t.name for t in schema.tables if t.name.lower() not in chosen_ci]
            take = min(noise_tables, len(non_gold))
            if take < noise_tables:
                logger.warning(
                    "question '%s': only %d non-gold tables available, clamping noise_tables from %d",
                    example.question_id,
                    take,
                    noise_tables,
                )
            rng = random.Random(f"{seed}:{example.question_id}")
            chosen_ci.update(name.lower() for name in rng.sample(non_gold, take))
        context = [t for t in schema.tables if t.name.lower() in chosen_ci]
        tables_text = SLICE_JOINER.join(render_table(t) for t in context)
        records.append(
            SftRecord(
                system=SQL_GENERATION_SYSTEM,
                user=sql_generation_user_text(example.question, tables_text),
                assistant=example.gold_sql,
                meta=RecordMeta(
                    question_id=example.question_id,
                    slice_index=None,
                    mode="sql_generation",
                ),
            )
        )
    return records


def render_template(system: str, user: str, assistant: str, dialect: TemplateDialect) -> str:
    """Serialize one record in the requested dialect, byte-stable."""
    dialect = TemplateDialect(dialect)
    if dialect is TemplateDialect.GENERIC_CHAT_JSONL:
        return json.dumps(
            {
                "messages": [
                    {"role": "system", "content": system},
                    {"role": "user", "content": user},
                    {"role": "assistant", "content": assistant},
                ]
            },
            ensure_ascii=False,
        )
    return f"<system>{system}<user>{user}<assistance>{assistant}<endoftext>"


def records_to_text(records: Iterable[SftRecord], dialect: TemplateDialect) -> str:
    lines = [render_template(r.system, r.user, r.assistant, dialect) for r in records]
    return "\n".join(lines) + ("\n" if lines else "")


def write_records(path: str | Path, records: Sequence[SftRecord], dialect: TemplateDialect) -> None:
    Path(path).write_text(records_to_text(records, dialect), encoding="utf-8")


def load_qa_jsonl(path: str | Path) -> list[QAExample]:
    """Read question/answer examples: JSONL of
    {"question_id", "db_id", "question", "gold_tables": [...], "gold_sql"}."""
    examples: list[QAExample] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            examples.append(
                QAExample(
                    question_id=str(raw["question_id"]),
                    question=raw["question"],
                    gold_tables=tuple(raw["gold_tables"]),
                    gold_sql=raw["gold_sql"],
                    db_id=str(raw.get("db_id", "db")),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: bad QA record: {exc}") from exc
    return examples


def write_qa_jsonl(path: str | Path, examples: Sequence[QAExample]) -> None:
    lines = [
        json.dumps(
            {
                "question_id": e.question_id,
                "db_id": e.db_id,
                "question": e.question,
                "gold_tables": list(e.gold_tables),
                "gold_sql": e.gold_sql,
            },
            ensure_ascii=False,
        )
        for e in examples
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def split_examples(
    examples: Sequence[QAExample],
    seed: int,
    train_fraction: float = 0.9,
) -> tuple[list[QAExample], list[QAExample]]:
    """Seeded-shuffle split into train and validation sets (9:1 by default)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    shuffled = list(examples)
    random.Random(seed).shuffle(shuffled)
    cut = int(len(shuffled) * train_fraction)
    return shuffled[:cut], shuffled[cut:]
