"""Token counting and slice budget derivation.

Real deployments count tokens with the target model's tokenizer. That
tokenizer is not embedded here; instead a counter is one of three kinds:

- ``heuristic-words``: maximal non-whitespace runs plus ASCII punctuation
  characters inside them. A serviceable stand-in for subword counts.
- ``bytes-quarter``: ceil(utf-8 byte length / 4).
- ``external-table``: exact lookup of precomputed counts (emitted by any
  real tokenizer) keyed by sha256 of the text; a miss is an error, never a
  silent default.

Empty text counts 0 under every kind.
"""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .errors import BudgetError, ParseError, UncountedTextError

_PUNCTUATION = frozenset(string.punctuation)


class CounterKind(str, Enum):
    HEURISTIC_WORDS = "heuristic-words"
    BYTES_QUARTER = "bytes-quarter"
    EXTERNAL_TABLE = "external-table"


@dataclass(frozen=True)
class TokenCounterSpec:
    kind: CounterKind
    external_counts: Mapping[str, int] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", CounterKind(self.kind))
        if self.kind is CounterKind.EXTERNAL_TABLE:
            if self.external_counts is None:
                raise ValueError("external-table counter requires a count table")
            table = dict(self.external_counts)
            if any(v < 0 for v in table.values()):
                raise ValueError("external count table holds a negative count")
            object.__setattr__(self, "external_counts", MappingProxyType(table))


@dataclass(frozen=True)
class TokenBudget:
    """Limits an instance's token footprint: slice_token is what remains of
    max_token after the template overhead model_token."""

    max_token: int
    model_token: int
    slice_token: int

    def __post_init__(self) -> None:
        if self.max_token <= 0 or self.model_token <= 0 or self.slice_token <= 0:
            raise BudgetError(
                f"token counts must be positive, got max={self.max_token} "
                f"model={self.model_token} slice={self.slice_token}"
            )
        if self.slice_token > self.max_token - self.model_token:
            raise BudgetError(
                f"slice_token {self.slice_token} exceeds max_token - model_token "
                f"= {self.max_token - self.model_token}"
            )


def text_key(text: str) -> str:
    """sha256 hex key under which external tables store a text's count."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def count_tokens(spec: TokenCounterSpec, text: str) -> int:
    if not text:
        return 0
    if spec.kind is CounterKind.HEURISTIC_WORDS:
        return _heuristic_count(text)
    if spec.kind is CounterKind.BYTES_QUARTER:
        return -(-len(text.encode("utf-8")) // 4)
    assert spec.external_counts is not None
    key = text_key(text)
    try:
        return spec.external_counts[key]
    except KeyError:
        raise UncountedTextError(
            f"no external count for text of length {len(text)} (sha256 {key[:12]}...)"
        ) from None


def _heuristic_count(text: str) -> int:
    runs = 0
    punct = 0
    in_run = False
    for ch in text:
        if ch.isspace():
            in_run = False
            continue
        if not in_run:
            runs += 1
            in_run = True
        if ch in _PUNCTUATION:
            punct += 1
    return runs + punct


def derive_slice_budget(max_token: int, model_token: int, margin: int = 0) -> TokenBudget:
    """Budget with slice_token = max_token - model_token - margin.

    Raises BudgetError when nothing is left for slices.
    """
    if margin < 0:
        raise BudgetError(f"margin must be >= 0, got {margin}")
    if max_token <= model_token + margin:
        raise BudgetError(
            f"infeasible budget: max_token {max_token} must exceed "
            f"model_token {model_token} + margin {margin}"
        )
    return TokenBudget(
        max_token=max_token,
        model_token=model_token,
        slice_token=max_token - model_token - margin,
    )


def load_count_table(path: str | Path) -> dict[str, int]:
    """Read an external count table: JSONL of {"sha256": hex, "tokens": int}."""
    table: dict[str, int] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            table[record["sha256"]] = int(record["tokens"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: bad count-table record: {exc}") from exc
    return table
