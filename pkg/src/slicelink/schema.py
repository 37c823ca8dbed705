"""Database schema model: loading, validation, foreign-key grouping, rendering.

Table and column names are stored case-preserving and compared
case-insensitively everywhere. All values are immutable after construction
and safe to share across threads.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

from .errors import ParseError, SchemaValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ColumnDef:
    name: str
    type_name: str
    is_primary_key: bool = False


@dataclass(frozen=True)
class ForeignKey:
    from_table: str
    from_column: str
    to_table: str
    to_column: str


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]
    foreign_keys: tuple[ForeignKey, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "foreign_keys", tuple(self.foreign_keys))
        if not self.name:
            raise SchemaValidationError(["table with empty name"])
        if not self.columns:
            raise SchemaValidationError([f"table '{self.name}' has no columns"])

    def find_column(self, name: str) -> ColumnDef | None:
        lowered = name.lower()
        for col in self.columns:
            if col.name.lower() == lowered:
                return col
        return None


@dataclass(frozen=True)
class DatabaseSchema:
    """A database as an ordered list of tables.

    Ingestion order of tables is preserved; it determines grouping, slicing
    and rendering order downstream.
    """

    db_id: str
    tables: tuple[TableDef, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tables", tuple(self.tables))
        problems = _collect_schema_problems(self)
        if problems:
            raise SchemaValidationError(problems)

    @cached_property
    def _by_name(self) -> dict[str, TableDef]:
        return {t.name.lower(): t for t in self.tables}

    def find_table(self, name: str) -> TableDef | None:
        return self._by_name.get(name.lower())

    def table(self, name: str) -> TableDef:
        found = self.find_table(name)
        if found is None:
            raise KeyError(f"no table named '{name}' in schema '{self.db_id}'")
        return found

    def table_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tables)


def _collect_schema_problems(schema: DatabaseSchema) -> list[str]:
    problems: list[str] = []
    seen_tables: set[str] = set()
    for table in schema.tables:
        key = table.name.lower()
        if key in seen_tables:
            problems.append(f"duplicate table name '{table.name}'")
        seen_tables.add(key)
        seen_cols: set[str] = set()
        for col in table.columns:
            if not col.name:
                problems.append(f"table '{table.name}' has a column with empty name")
                continue
            ckey = col.name.lower()
            if ckey in seen_cols:
                problems.append(
                    f"table '{table.name}' has duplicate column name '{col.name}'"
                )
            seen_cols.add(ckey)
    by_name = {t.name.lower(): t for t in schema.tables}
    for table in schema.tables:
        for fk in table.foreign_keys:
            label = f"foreign key {fk.from_table}.{fk.from_column} -> {fk.to_table}.{fk.to_column}"
            if fk.from_table.lower() != table.name.lower():
                problems.append(
                    f"{label}: declared on table '{table.name}' but originates at '{fk.from_table}'"
                )
            if table.find_column(fk.from_column) is None:
                problems.append(f"{label}: unknown column '{fk.from_column}' in '{table.name}'")
            target = by_name.get(fk.to_table.lower())
            if target is None:
                problems.append(f"{label}: unknown table '{fk.to_table}'")
            elif target.find_column(fk.to_column) is None:
                problems.append(f"{label}: unknown column '{fk.to_column}' in '{fk.to_table}'")
    return problems


@dataclass(frozen=True)
class CorrelationGroup:
    """Tables mutually connected through foreign keys."""

    group_id: int
    member_tables: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "member_tables", tuple(self.member_tables))


@dataclass(frozen=True)
class GroupPartition:
    """Split of a schema's tables into foreign-key groups and loose tables."""

    reference_groups: tuple[CorrelationGroup, ...]
    no_reference_tables: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "reference_groups", tuple(self.reference_groups))
        object.__setattr__(self, "no_reference_tables", tuple(self.no_reference_tables))

    def ordered_table_names(self) -> tuple[str, ...]:
        """All tables in traversal order: group members first, then loose tables."""
        names: list[str] = []
        for group in self.reference_groups:
            names.extend(group.member_tables)
        names.extend(self.no_reference_tables)
        return tuple(names)


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[str, str] = {}

    def add(self, key: str) -> None:
        self.parent.setdefault(key, key)

    def find(self, key: str) -> str:
        root = key
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[key] != root:
            self.parent[key], key = root, self.parent[key]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def group_by_foreign_keys(schema: DatabaseSchema) -> GroupPartition:
    """Partition tables into foreign-key correlation groups and loose tables.

    A correlation group is one connected component of the undirected graph
    whose edges are the schema's foreign keys. Components of a single table
    qualify only when that table references itself; every table with no
    foreign-key participation lands in ``no_reference_tables``. Groups and
    their members are ordered by first appearance in schema table order.
    """
    uf = _UnionFind()
    self_referencing: set[str] = set()
    for table in schema.tables:
        uf.add(table.name.lower())
    for table in schema.tables:
        for fk in table.foreign_keys:
            a = fk.from_table.lower()
            b = fk.to_table.lower()
            if a == b:
                self_referencing.add(a)
            uf.union(a, b)

    members: dict[str, list[str]] = {}
    for table in schema.tables:
        members.setdefault(uf.find(table.name.lower()), []).append(table.name)

    groups: list[CorrelationGroup] = []
    loose: list[str] = []
    seen_roots: set[str] = set()
    for table in schema.tables:
        root = uf.find(table.name.lower())
        if root in seen_roots:
            continue
        seen_roots.add(root)
        component = members[root]
        if len(component) >= 2 or table.name.lower() in self_referencing:
            groups.append(CorrelationGroup(group_id=len(groups), member_tables=tuple(component)))
        else:
            loose.append(component[0])
    return GroupPartition(reference_groups=tuple(groups), no_reference_tables=tuple(loose))


def render_table(table: TableDef) -> str:
    """Serialize one table to its canonical text block.

    Format: a ``table <name>`` header, one ``  <name> <type> [PK]`` line per
    column, one ``  FK <column> -> <table>.<column>`` line per foreign key.
    Byte-identical across runs for identical input.
    """
    lines = [f"table {table.name}"]
    for col in table.columns:
        suffix = " [PK]" if col.is_primary_key else ""
        lines.append(f"  {col.name} {col.type_name}{suffix}")
    for fk in table.foreign_keys:
        lines.append(f"  FK {fk.from_column} -> {fk.to_table}.{fk.to_column}")
    return "\n".join(lines)


def render_ddl(schema: DatabaseSchema) -> str:
    """Emit the schema as CREATE TABLE statements in the supported subset."""
    statements: list[str] = []
    for table in schema.tables:
        items = []
        for col in table.columns:
            suffix = " PRIMARY KEY" if col.is_primary_key else ""
            items.append(f"  {col.name} {col.type_name}{suffix}")
        for fk in table.foreign_keys:
            items.append(
                f"  FOREIGN KEY ({fk.from_column}) REFERENCES {fk.to_table} ({fk.to_column})"
            )
        body = ",\n".join(items)
        statements.append(f"CREATE TABLE {table.name} (\n{body}\n);")
    return "\n\n".join(statements)


def load_schema_json(path: str | Path, db_id: str | None = None) -> DatabaseSchema:
    """Load a schema from a JSON file.

    Accepts the native schema format or a Spider-style catalog entry with
    index-based foreign keys; a list of catalog entries is accepted when it
    has a single element or ``db_id`` selects one. Raises ParseError for
    malformed files and SchemaValidationError listing every dangling foreign
    key endpoint or duplicate name.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc

    if isinstance(raw, list):
        raw = _select_catalog_entry(raw, db_id, path)
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: expected a JSON object at top level")

    if "table_names_original" in raw or "table_names" in raw:
        return _schema_from_catalog_entry(raw)
    if "tables" in raw:
        return _schema_from_native(raw)
    raise ParseError(f"{path}: unrecognized schema format (no 'tables' or 'table_names_original' key)")


def _select_catalog_entry(entries: list, db_id: str | None, path: Path) -> dict:
    if db_id is not None:
        for entry in entries:
            if isinstance(entry, dict) and entry.get("db_id") == db_id:
                return entry
        raise ParseError(f"{path}: no catalog entry with db_id '{db_id}'")
    if len(entries) == 1 and isinstance(entries[0], dict):
        return entries[0]
    raise ParseError(
        f"{path}: file holds {len(entries)} catalog entries; pass db_id to select one"
    )


def _schema_from_native(raw: dict) -> DatabaseSchema:
    tables = []
    for tbl in raw.get("tables", []):
        name = tbl["name"]
        columns = tuple(
            ColumnDef(name=c["name"], type_name=c.get("type", "text"), is_primary_key=bool(c.get("pk", False)))
            for c in tbl.get("columns", [])
        )
        fks = tuple(
            ForeignKey(
                from_table=name,
                from_column=fk["from_column"],
                to_table=fk["to_table"],
                to_column=fk["to_column"],
            )
            for fk in tbl.get("foreign_keys", [])
        )
        tables.append(TableDef(name=name, columns=columns, foreign_keys=fks))
    return DatabaseSchema(db_id=str(raw.get("db_id", "db")), tables=tuple(tables))


def _schema_from_catalog_entry(raw: dict) -> DatabaseSchema:
    table_names = raw.get("table_names_original") or raw.get("table_names") or []
    column_entries = raw.get("column_names_original") or raw.get("column_names") or []
    column_types = raw.get("column_types") or []
    primary_keys = set(raw.get("primary_keys") or [])

    # Column index 0 is the "*" sentinel (table index -1); real columns only.
    columns_by_table: dict[int, list[ColumnDef]] = {i: [] for i in range(len(table_names))}
    index_to_name: dict[int, tuple[str, str]] = {}
    for idx, entry in enumerate(column_entries):
        table_idx, col_name = entry
        if table_idx < 0:
            continue
        type_name = column_types[idx] if idx < len(column_types) else "text"
        columns_by_table[table_idx].append(
            ColumnDef(name=col_name, type_name=type_name, is_primary_key=idx in primary_keys)
        )
        index_to_name[idx] = (table_names[table_idx], col_name)

    fks_by_table: dict[str, list[ForeignKey]] = {name: [] for name in table_names}
    for pair in raw.get("foreign_keys") or []:
        from_idx, to_idx = pair
        try:
            from_table, from_column = index_to_name[from_idx]
            to_table, to_column = index_to_name[to_idx]
        except KeyError as exc:
            raise ParseError(f"foreign key {pair}: column index {exc} out of range") from exc
        fks_by_table[from_table].append(
            ForeignKey(from_table=from_table, from_column=from_column, to_table=to_table, to_column=to_column)
        )

    tables = tuple(
        TableDef(
            name=name,
            columns=tuple(columns_by_table[i]),
            foreign_keys=tuple(fks_by_table[name]),
        )
        for i, name in enumerate(table_names)
    )
    return DatabaseSchema(db_id=str(raw.get("db_id", "db")), tables=tables)


def schema_to_dict(schema: DatabaseSchema) -> dict:
    """Native-format dict for a schema, suitable for JSON serialization."""
    return {
        "db_id": schema.db_id,
        "tables": [
            {
                "name": t.name,
                "columns": [
                    {"name": c.name, "type": c.type_name, "pk": c.is_primary_key}
                    for c in t.columns
                ],
                "foreign_keys": [
                    {"from_column": fk.from_column, "to_table": fk.to_table, "to_column": fk.to_column}
                    for fk in t.foreign_keys
                ],
            }
            for t in schema.tables
        ],
    }
