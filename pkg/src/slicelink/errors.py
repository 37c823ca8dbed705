"""Exception types shared across the package."""

from __future__ import annotations


class SlicelinkError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(SlicelinkError):
    """An input file could not be parsed."""


class DdlSyntaxError(ParseError):
    """DDL text violates the supported CREATE TABLE subset."""

    def __init__(self, message: str, line: int, column: int) -> None:
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


class SchemaValidationError(SlicelinkError):
    """A schema violates a structural invariant.

    ``problems`` lists every violation found, not just the first.
    """

    def __init__(self, problems: list[str]) -> None:
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class UncountedTextError(SlicelinkError):
    """An external count table has no entry for the requested text."""


class BudgetError(SlicelinkError):
    """A token budget is infeasible or violates its bounds."""


class OversizeTableError(SlicelinkError):
    """A single table's rendering alone reaches the slice budget."""

    def __init__(self, table_name: str, token_count: int, slice_token: int) -> None:
        self.table_name = table_name
        self.token_count = token_count
        self.slice_token = slice_token
        super().__init__(
            f"table '{table_name}' renders to {token_count} tokens, which does not "
            f"fit under the slice budget of {slice_token}"
        )


class CompileError(SlicelinkError):
    """Dataset compilation failed, e.g. a gold table missing from every slice."""


class BackendError(SlicelinkError):
    """A language-model backend call failed."""


class BackendTransportError(BackendError):
    """A transient transport failure that may be retried."""


class JoinError(SlicelinkError):
    """Prediction and gold files do not join on question_id."""

    def __init__(self, message: str, unmatched_ids: list[str]) -> None:
        self.unmatched_ids = list(unmatched_ids)
        super().__init__(f"{message}: {', '.join(self.unmatched_ids)}")


class GoldExecutionError(SlicelinkError):
    """The gold SQL itself failed to execute; the fixture is invalid."""
