"""Greedy packing of tables into token-budgeted slices.

Tables are visited in a fixed order: correlation groups first (groups in
first-appearance order, members in schema order), then tables without
foreign keys. Each table's rendering is appended to the current slice while
the combined rendering stays strictly under the slice budget; otherwise the
slice is sealed and a new one starts. That construction order is also the
canonical reasoning order used downstream for dataset compilation and
inference.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import OversizeTableError
from .schema import DatabaseSchema, GroupPartition, TableDef, render_table
from .tokens import CounterKind, TokenBudget, TokenCounterSpec, count_tokens

logger = logging.getLogger(__name__)

# Separator between table renderings inside one slice.
SLICE_JOINER = "\n\n"


@dataclass(frozen=True)
class Slice:
    slice_index: int
    table_names: tuple[str, ...]
    rendered_text: str
    token_count: int
    oversize: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "table_names", tuple(self.table_names))


@dataclass(frozen=True)
class SliceSet:
    slices: tuple[Slice, ...]
    budget: TokenBudget
    counter: TokenCounterSpec
    source_db_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "slices", tuple(self.slices))

    def __len__(self) -> int:
        return len(self.slices)

    def all_table_names(self) -> tuple[str, ...]:
        return tuple(name for sl in self.slices for name in sl.table_names)


def build_slices(
    schema: DatabaseSchema,
    partition: GroupPartition,
    budget: TokenBudget,
    counter: TokenCounterSpec,
    allow_oversize: bool = False,
) -> SliceSet:
    """Pack the partition's tables into slices by greedy first-fit.

    A table whose rendering alone reaches ``budget.slice_token`` raises
    OversizeTableError; with ``allow_oversize`` it becomes its own slice,
    flagged. No reordering is attempted beyond the fixed traversal order.
    """
    slices: list[Slice] = []
    current: list[TableDef] = []
    current_text = ""
    current_count = 0

    def seal(oversize: bool = False) -> None:
        nonlocal current, current_text, current_count
        slices.append(
            Slice(
                slice_index=len(slices),
                table_names=tuple(t.name for t in current),
                rendered_text=current_text,
                token_count=current_count,
                oversize=oversize,
            )
        )
        current = []
        current_text = ""
        current_count = 0

    for name in partition.ordered_table_names():
        table = schema.table(name)
        rendered = render_table(table)
        candidate_text = current_text + SLICE_JOINER + rendered if current else rendered
        candidate_count = count_tokens(counter, candidate_text)
        if candidate_count < budget.slice_token:
            current.append(table)
            current_text = candidate_text
            current_count = candidate_count
            continue
        if current:
            seal()
        alone_count = count_tokens(counter, rendered)
        if alone_count < budget.slice_token:
            current = [table]
            current_text = rendered
            current_count = alone_count
            continue
        if not allow_oversize:
            raise OversizeTableError(table.name, alone_count, budget.slice_token)
        logger.warning(
            "table '%s' (%d tokens) exceeds the slice budget %d; emitting oversize slice",
            table.name,
            alone_count,
            budget.slice_token,
        )
        current = [table]
        current_text = rendered
        current_count = alone_count
        seal(oversize=True)

    if current:
        seal()
    return SliceSet(
        slices=tuple(slices),
        budget=budget,
        counter=counter,
        source_db_id=schema.db_id,
    )


def reslice(
    schema: DatabaseSchema,
    partition: GroupPartition,
    inference_budget: TokenBudget,
    counter: TokenCounterSpec,
    allow_oversize: bool = False,
) -> SliceSet:
    """Rebuild slices at a different granularity, e.g. for inference.

    Identical contract to build_slices; with the training budget it
    reproduces the training slice set exactly.
    """
    return build_slices(schema, partition, inference_budget, counter, allow_oversize=allow_oversize)


def validate_slices(slices: SliceSet, schema: DatabaseSchema) -> list[str]:
    """Check a slice set against its schema; violations are data, not errors.

    Reports totality (every table sliced), disjointness (no table twice),
    budget (strict, unless the slice is flagged oversize), count consistency
    and non-emptiness. Empty list means the slice set is sound.
    """
    violations: list[str] = []
    seen: dict[str, int] = {}
    for sl in slices.slices:
        if not sl.table_names:
            violations.append(f"slice {sl.slice_index} contains no tables")
        for name in sl.table_names:
            key = name.lower()
            if key in seen:
                violations.append(
                    f"disjointness: table '{name}' appears in slice {seen[key]} and slice {sl.slice_index}"
                )
            else:
                seen[key] = sl.slice_index
            if schema.find_table(name) is None:
                violations.append(f"unknown table '{name}' in slice {sl.slice_index}")
        if not sl.oversize and sl.token_count >= slices.budget.slice_token:
            violations.append(
                f"budget: slice {sl.slice_index} counts {sl.token_count} tokens, "
                f"budget is {slices.budget.slice_token}"
            )
        actual = count_tokens(slices.counter, sl.rendered_text)
        if actual != sl.token_count:
            violations.append(
                f"count mismatch: slice {sl.slice_index} records {sl.token_count} tokens, "
                f"counter says {actual}"
            )
    for table in schema.tables:
        if table.name.lower() not in seen:
            violations.append(f"totality: table '{table.name}' missing from every slice")
    return violations


def slice_set_to_dict(slices: SliceSet) -> dict:
    out_slices = []
    for sl in slices.slices:
        entry = {
            "index": sl.slice_index,
            "tables": list(sl.table_names),
            "text": sl.rendered_text,
            "tokens": sl.token_count,
        }
        if sl.oversize:
            entry["oversize"] = True
        out_slices.append(entry)
    return {
        "db_id": slices.source_db_id,
        "slice_token": slices.budget.slice_token,
        "counter": slices.counter.kind.value,
        "slices": out_slices,
    }


def slice_set_to_json(slices: SliceSet) -> str:
    return json.dumps(slice_set_to_dict(slices), ensure_ascii=False, indent=2) + "\n"


def write_slice_set(path: str | Path, slices: SliceSet) -> None:
    Path(path).write_text(slice_set_to_json(slices), encoding="utf-8")


def slice_set_from_dict(raw: dict, counter: TokenCounterSpec | None = None) -> SliceSet:
    """Rebuild a slice set from its JSON form.

    Only slice_token survives serialization, so the budget is reconstructed
    with placeholder max/model values; downstream consumers of a loaded
    slice set use the slice texts and slice_token only.
    """
    slice_token = int(raw["slice_token"])
    budget = TokenBudget(max_token=slice_token + 1, model_token=1, slice_token=slice_token)
    if counter is None:
        kind = CounterKind(raw["counter"])
        if kind is CounterKind.EXTERNAL_TABLE:
            counter = TokenCounterSpec(kind=kind, external_counts={})
        else:
            counter = TokenCounterSpec(kind=kind)
    slices = tuple(
        Slice(
            slice_index=int(entry["index"]),
            table_names=tuple(entry["tables"]),
            rendered_text=entry["text"],
            token_count=int(entry["tokens"]),
            oversize=bool(entry.get("oversize", False)),
        )
        for entry in raw["slices"]
    )
    return SliceSet(slices=slices, budget=budget, counter=counter, source_db_id=str(raw["db_id"]))


def read_slice_set(path: str | Path, counter: TokenCounterSpec | None = None) -> SliceSet:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return slice_set_from_dict(raw, counter=counter)
