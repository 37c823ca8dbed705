"""Shared fixtures: hand-sized schemas, seeded random schemas, independent oracles.

Oracles here are deliberately separate code paths from the package: BFS
reachability for grouping, a re-implemented greedy packer for slicing, a
regex counter for tokens and rational arithmetic for metrics.
"""

from __future__ import annotations

import random
import re
from fractions import Fraction

import pytest

from slicelink.schema import (
    ColumnDef,
    DatabaseSchema,
    ForeignKey,
    GroupPartition,
    TableDef,
    render_table,
)
from slicelink.slicing import Slice, SliceSet
from slicelink.tokens import CounterKind, TokenBudget, TokenCounterSpec, count_tokens


# ---------------------------------------------------------------------------
# Exact-count building blocks. Under the heuristic-words counter a table
# named without punctuation, with k punctuation-free columns, renders to
# exactly 2 + 2k tokens, and joined renderings count additively.


def exact_table(name: str, token_count: int, fks: tuple[ForeignKey, ...] = ()) -> TableDef:
    assert token_count >= 4 and token_count % 2 == 0, "counts are 2 + 2k"
    k = (token_count - 2) // 2
    return TableDef(
        name=name,
        columns=tuple(ColumnDef(f"c{i}", "INT") for i in range(k)),
        foreign_keys=fks,
    )


def schema_of_exact_tables(counts: dict[str, int], db_id: str = "fixture") -> DatabaseSchema:
    return DatabaseSchema(
        db_id=db_id, tables=tuple(exact_table(name, n) for name, n in counts.items())
    )


@pytest.fixture
def heuristic_counter() -> TokenCounterSpec:
    return TokenCounterSpec(kind=CounterKind.HEURISTIC_WORDS)


@pytest.fixture
def two_table_schema() -> DatabaseSchema:
    a = TableDef(
        name="a",
        columns=(ColumnDef("id", "INT", is_primary_key=True), ColumnDef("label", "TEXT")),
    )
    b = TableDef(
        name="b",
        columns=(ColumnDef("id", "INT", is_primary_key=True), ColumnDef("aid", "INT")),
        foreign_keys=(ForeignKey("b", "aid", "a", "id"),),
    )
    return DatabaseSchema(db_id="two", tables=(a, b))


# ---------------------------------------------------------------------------
# Seeded random schemas.


def random_schema(rng: random.Random, max_tables: int = 12, db_id: str = "rnd") -> DatabaseSchema:
    n = rng.randint(1, max_tables)
    names = []
    for i in range(n):
        base = f"t{i}"
        names.append(base.upper() if rng.random() < 0.3 else base)
    columns = {
        name: [
            ColumnDef(
                f"c{j}",
                rng.choice(["INT", "TEXT", "REAL"]),
                is_primary_key=(j == 0 and rng.random() < 0.5),
            )
            for j in range(rng.randint(1, 5))
        ]
        for name in names
    }
    fks: dict[str, list[ForeignKey]] = {name: [] for name in names}
    for _ in range(rng.randint(0, n + 2)):
        src = rng.choice(names)
        dst = rng.choice(names)
        fks[src].append(
            ForeignKey(
                from_table=src,
                from_column=rng.choice(columns[src]).name,
                to_table=dst,
                to_column=rng.choice(columns[dst]).name,
            )
        )
    tables = tuple(
        TableDef(name=name, columns=tuple(columns[name]), foreign_keys=tuple(fks[name]))
        for name in names
    )
    return DatabaseSchema(db_id=db_id, tables=tables)


def thirty_table_schema(seed: int = 30) -> DatabaseSchema:
    """Deterministic 30-table schema with FK edges among the first 20 tables."""
    rng = random.Random(seed)
    names = [f"t{i}" for i in range(30)]
    columns = {
        name: [
            ColumnDef(f"c{j}", rng.choice(["INT", "TEXT", "REAL"]), is_primary_key=(j == 0))
            for j in range(rng.randint(1, 5))
        ]
        for name in names
    }
    fks: dict[str, list[ForeignKey]] = {name: [] for name in names}
    for _ in range(12):
        src, dst = rng.sample(names[:20], 2)
        fks[src].append(
            ForeignKey(
                from_table=src,
                from_column=rng.choice(columns[src]).name,
                to_table=dst,
                to_column=columns[dst][0].name,
            )
        )
    tables = tuple(
        TableDef(name=name, columns=tuple(columns[name]), foreign_keys=tuple(fks[name]))
        for name in names
    )
    return DatabaseSchema(db_id="thirty", tables=tables)


# ---------------------------------------------------------------------------
# Independent oracles.


def bfs_partition_oracle(schema: DatabaseSchema) -> tuple[list[list[str]], list[str]]:
    """Connected components by breadth-first reachability over FK edges."""
    adjacency: dict[str, set[str]] = {t.name.lower(): set() for t in schema.tables}
    self_referencing: set[str] = set()
    for table in schema.tables:
        for fk in table.foreign_keys:
            a, b = fk.from_table.lower(), fk.to_table.lower()
            if a == b:
                self_referencing.add(a)
            else:
                adjacency[a].add(b)
                adjacency[b].add(a)
    order = [t.name for t in schema.tables]
    visited: set[str] = set()
    groups: list[list[str]] = []
    loose: list[str] = []
    for name in order:
        key = name.lower()
        if key in visited:
            continue
        frontier = [key]
        visited.add(key)
        component = {key}
        while frontier:
            current = frontier.pop(0)
            for neighbor in sorted(adjacency[current]):
                if neighbor not in visited:
                    visited.add(neighbor)
                    component.add(neighbor)
                    frontier.append(neighbor)
        member_names = [n for n in order if n.lower() in component]
        if len(member_names) >= 2 or key in self_referencing:
            groups.append(member_names)
        else:
            loose.append(member_names[0])
    return groups, loose


def greedy_slicing_oracle(
    schema: DatabaseSchema,
    partition: GroupPartition,
    budget: TokenBudget,
    counter: TokenCounterSpec,
) -> SliceSet:
    """Re-implementation of the first-fit packing loop, structured around
    (name, render) pairs instead of streaming state."""
    pairs = [(name, render_table(schema.table(name))) for name in partition.ordered_table_names()]
    buckets: list[list[tuple[str, str]]] = []
    bucket: list[tuple[str, str]] = []
    for name, rendered in pairs:
        joined = "\n\n".join(r for _, r in bucket + [(name, rendered)])
        if count_tokens(counter, joined) < budget.slice_token:
            bucket.append((name, rendered))
            continue
        if bucket:
            buckets.append(bucket)
        solo = count_tokens(counter, rendered)
        if solo >= budget.slice_token:
            raise AssertionError(f"oracle fixture produced an oversize table {name}")
        bucket = [(name, rendered)]
    if bucket:
        buckets.append(bucket)
    slices = []
    for index, grouped in enumerate(buckets):
        text = "\n\n".join(r for _, r in grouped)
        slices.append(
            Slice(
                slice_index=index,
                table_names=tuple(n for n, _ in grouped),
                rendered_text=text,
                token_count=count_tokens(counter, text),
            )
        )
    return SliceSet(
        slices=tuple(slices), budget=budget, counter=counter, source_db_id=schema.db_id
    )


def heuristic_count_oracle(text: str) -> int:
    """Regex-based reimplementation of the word-plus-punctuation rule."""
    runs = re.findall(r"\S+", text)
    punctuation = re.findall(r"[!-/:-@\[-`{-~]", text)
    return len(runs) + len(punctuation)


def table_metrics_oracle(pairs) -> tuple[float, float, float, float]:
    """Rational-arithmetic reimplementation of the four table metrics."""
    n = len(pairs)
    total = Fraction(0)
    filtered = Fraction(0)
    precision = Fraction(0)
    recall = Fraction(0)
    for predicted_raw, gold_raw in pairs:
        predicted = {x.lower() for x in predicted_raw}
        gold = {x.lower() for x in gold_raw}
        overlap = len(predicted & gold)
        if predicted == gold:
            total += 1
        if gold.issubset(predicted):
            filtered += 1
        if len(predicted) > 0:
            precision += Fraction(overlap, len(predicted))
        elif len(gold) == 0:
            precision += 1
        recall += Fraction(overlap, len(gold)) if len(gold) else Fraction(1)
    return (
        float(total / n),
        float(filtered / n),
        float(precision / n),
        float(recall / n),
    )
