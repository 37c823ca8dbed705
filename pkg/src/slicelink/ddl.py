"""CREATE TABLE parser for the supported DDL subset.

Supported: CREATE TABLE with typed columns, inline or table-level
PRIMARY KEY, FOREIGN KEY ... REFERENCES (table-level or inline REFERENCES
on a column). Other statements (indexes, inserts, ...) are skipped with a
warning. Anything else is a syntax error with line and column.
"""

from __future__ import annotations

import logging
import re
from .errors import DdlSyntaxError
from .schema import ColumnDef, DatabaseSchema, ForeignKey, TableDef

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(
    r'"(?:[^"]|"")*"'      # double-quoted identifier
    r"|`(?:[^`]|``)*`"     # backtick-quoted identifier
    r"|'(?:[^']|'')*'"     # string literal
    r"|[A-Za-z_][A-Za-z_0-9$]*"
    r"|\d+(?:\.\d+)?"
    r"|\(|\)|,"
    r"|\S",
)

_CREATE_TABLE_RE = re.compile(r"^\s*CREATE\s+TABLE\s+(IF\s+NOT\s+EXISTS\s+)?", re.IGNORECASE)

# Keywords that terminate a column's type token run.
_CONSTRAINT_KEYWORDS = {"PRIMARY", "NOT", "NULL", "UNIQUE", "DEFAULT", "REFERENCES", "CHECK", "COLLATE"}


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    last_nl = text.rfind("\n", 0, offset)
    return line, offset - last_nl


class _Token:
    __slots__ = ("text", "offset")

    def __init__(self, text: str, offset: int) -> None:
        self.text = text
        self.offset = offset

    def upper(self) -> str:
        return self.text.upper()


def _tokenize(text: str, start: int, end: int) -> list[_Token]:
    return [_Token(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text, start, end)]


def _unquote(token: str) -> str:
    if len(token) >= 2 and token[0] == token[-1] and token[0] in "\"`":
        q = token[0]
        return token[1:-1].replace(q + q, q)
    return token


def _split_statements(text: str) -> list[tuple[int, int]]:
    """Spans of ';'-terminated statements, ignoring ';' inside quotes."""
    spans = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c in "'\"`":
            j = text.find(c, i + 1)
            i = n if j < 0 else j + 1
            continue
        if c == ";":
            spans.append((start, i))
            start = i + 1
        i += 1
    if text[start:].strip():
        spans.append((start, n))
    return spans


def parse_ddl(text: str, db_id: str = "db", skipped: list[str] | None = None) -> DatabaseSchema:
    """Parse CREATE TABLE statements into a validated schema.

    Unsupported statements are skipped; their first line is appended to
    ``skipped`` when given, and logged either way. Raises DdlSyntaxError on
    malformed CREATE TABLE text, SchemaValidationError on dangling foreign
    keys or duplicate names.
    """
    tables: list[TableDef] = []
    for start, end in _split_statements(text):
        stmt = text[start:end]
        if not stmt.strip():
            continue
        match = _CREATE_TABLE_RE.match(stmt)
        if match is None:
            summary = stmt.strip().splitlines()[0]
            logger.warning("skipping unsupported statement: %s", summary)
            if skipped is not None:
                skipped.append(summary)
            continue
        tables.append(_parse_create_table(text, start + match.end(), end))
    return DatabaseSchema(db_id=db_id, tables=tuple(tables))


def _parse_create_table(text: str, start: int, end: int) -> TableDef:
    tokens = _tokenize(text, start, end)
    if not tokens:
        raise DdlSyntaxError("expected table name after CREATE TABLE", *_line_col(text, start))
    name = _unquote(tokens[0].text)
    if tokens[0].text in "(),":
        raise DdlSyntaxError("expected table name after CREATE TABLE", *_line_col(text, tokens[0].offset))
    if len(tokens) < 2 or tokens[1].text != "(":
        offset = tokens[1].offset if len(tokens) > 1 else tokens[0].offset
        raise DdlSyntaxError(f"expected '(' after table name '{name}'", *_line_col(text, offset))

    # Find the matching close paren; trailing tokens (e.g. WITHOUT ROWID) are ignored.
    depth = 0
    close = None
    for idx in range(1, len(tokens)):
        if tokens[idx].text == "(":
            depth += 1
        elif tokens[idx].text == ")":
            depth -= 1
            if depth == 0:
                close = idx
                break
    if close is None:
        raise DdlSyntaxError(f"unbalanced parentheses in table '{name}'", *_line_col(text, tokens[1].offset))

    items = _split_items(tokens[2:close])
    columns: list[ColumnDef] = []
    fks: list[ForeignKey] = []
    table_pks: list[str] = []
    for item in items:
        kind = item[0].upper()
        if kind == "CONSTRAINT" and len(item) > 2:
            item = item[2:]
            kind = item[0].upper()
        if kind == "PRIMARY":
            table_pks.extend(_parse_paren_names(text, name, item, expect="PRIMARY KEY"))
        elif kind == "FOREIGN":
            fks.append(_parse_foreign_key(text, name, item))
        elif kind in ("UNIQUE", "CHECK"):
            logger.debug("ignoring %s constraint in table '%s'", kind, name)
        else:
            col, inline_fk = _parse_column(text, name, item)
            columns.append(col)
            if inline_fk is not None:
                fks.append(inline_fk)

    if not columns:
        raise DdlSyntaxError(f"table '{name}' defines no columns", *_line_col(text, tokens[1].offset))

    if table_pks:
        pk_set = {n.lower() for n in table_pks}
        columns = [
            ColumnDef(c.name, c.type_name, is_primary_key=c.is_primary_key or c.name.lower() in pk_set)
            for c in columns
        ]
    return TableDef(name=name, columns=tuple(columns), foreign_keys=tuple(fks))


def _split_items(tokens: list[_Token]) -> list[list[_Token]]:
    items: list[list[_Token]] = []
    current: list[_Token] = []
    depth = 0
    for tok in tokens:
        if tok.text == "(":
            depth += 1
        elif tok.text == ")":
            depth -= 1
        elif tok.text == "," and depth == 0:
            if current:
                items.append(current)
            current = []
            continue
        current.append(tok)
    if current:
        items.append(current)
    return items


def _parse_paren_names(text: str, table: str, item: list[_Token], expect: str) -> list[str]:
    # item looks like: PRIMARY KEY ( a [, b ...] )
    idx = 0
    for word in expect.split():
        if idx >= len(item) or item[idx].upper() != word:
            raise DdlSyntaxError(f"malformed {expect} clause in table '{table}'", *_line_col(text, item[0].offset))
        idx += 1
    if idx >= len(item) or item[idx].text != "(":
        raise DdlSyntaxError(f"expected '(' in {expect} clause of table '{table}'", *_line_col(text, item[-1].offset))
    names = [_unquote(t.text) for t in item[idx + 1 :] if t.text not in "(),"]
    if not names:
        raise DdlSyntaxError(f"empty column list in {expect} clause of table '{table}'", *_line_col(text, item[idx].offset))
    return names


def _parse_foreign_key(text: str, table: str, item: list[_Token]) -> ForeignKey:
    # item looks like: FOREIGN KEY ( col ) REFERENCES other ( col )
    upper = [t.upper() for t in item]
    try:
        ref_idx = upper.index("REFERENCES")
    except ValueError:
        raise DdlSyntaxError(f"FOREIGN KEY without REFERENCES in table '{table}'", *_line_col(text, item[0].offset)) from None
    local = _parse_paren_names(text, table, item[:ref_idx], expect="FOREIGN KEY")
    rest = item[ref_idx + 1 :]
    if not rest:
        raise DdlSyntaxError(f"REFERENCES without target table in '{table}'", *_line_col(text, item[ref_idx].offset))
    target = _unquote(rest[0].text)
    remote = [_unquote(t.text) for t in rest[1:] if t.text not in "(),"]
    if not remote:
        raise DdlSyntaxError(
            f"REFERENCES {target} without a column list in table '{table}'",
            *_line_col(text, rest[0].offset),
        )
    if len(local) != len(remote):
        raise DdlSyntaxError(
            f"FOREIGN KEY column count mismatch in table '{table}'", *_line_col(text, item[0].offset)
        )
    if len(local) != 1:
        raise DdlSyntaxError(
            f"composite foreign keys are not supported (table '{table}')", *_line_col(text, item[0].offset)
        )
    return ForeignKey(from_table=table, from_column=local[0], to_table=target, to_column=remote[0])


def _parse_column(text: str, table: str, item: list[_Token]) -> tuple[ColumnDef, ForeignKey | None]:
    name_tok = item[0]
    if name_tok.text in "(),":
        raise DdlSyntaxError(f"expected column name in table '{table}'", *_line_col(text, name_tok.offset))
    name = _unquote(name_tok.text)

    type_parts: list[str] = []
    idx = 1
    while idx < len(item) and item[idx].upper() not in _CONSTRAINT_KEYWORDS:
        type_parts.append(item[idx].text)
        idx += 1
    type_name = _join_type(type_parts)
    if not type_name:
        raise DdlSyntaxError(f"column '{name}' in table '{table}' has no type", *_line_col(text, name_tok.offset))

    is_pk = False
    inline_fk: ForeignKey | None = None
    while idx < len(item):
        word = item[idx].upper()
        if word == "PRIMARY":
            if idx + 1 >= len(item) or item[idx + 1].upper() != "KEY":
                raise DdlSyntaxError(f"expected KEY after PRIMARY in table '{table}'", *_line_col(text, item[idx].offset))
            is_pk = True
            idx += 2
        elif word == "REFERENCES":
            rest = item[idx + 1 :]
            if not rest:
                raise DdlSyntaxError(f"REFERENCES without target in table '{table}'", *_line_col(text, item[idx].offset))
            target = _unquote(rest[0].text)
            remote = [_unquote(t.text) for t in rest[1:] if t.text not in "(),"]
            if not remote:
                raise DdlSyntaxError(
                    f"REFERENCES {target} without a column list in table '{table}'",
                    *_line_col(text, rest[0].offset),
                )
            inline_fk = ForeignKey(from_table=table, from_column=name, to_table=target, to_column=remote[0])
            break
        else:
            # NOT NULL, UNIQUE, DEFAULT <value>, COLLATE <name>, CHECK (...)
            idx += 1
    return ColumnDef(name=name, type_name=type_name, is_primary_key=is_pk), inline_fk


def _join_type(parts: list[str]) -> str:
    """Reassemble type tokens: 'VARCHAR ( 255 )' -> 'VARCHAR(255)'."""
    text = " ".join(parts)
    text = re.sub(r"\s*\(\s*", "(", text)
    text = re.sub(r"\s*\)", ")", text)
    text = re.sub(r"\s*,\s*", ", ", text)
    return text.strip()
