"""Pipeline configuration: one TOML or JSON file, flag overrides applied on top."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .backends import BackendKind, BackendSpec
from .errors import ParseError, SlicelinkError
from .sft import CompileMode, TemplateDialect
from .tokens import CounterKind, TokenBudget, TokenCounterSpec, derive_slice_budget, load_count_table


@dataclass(frozen=True)
class PipelineConfig:
    schema_path: Path
    qa_path: Path
    out_dir: Path
    budget: TokenBudget
    counter: TokenCounterSpec
    backend: BackendSpec
    mode: CompileMode = CompileMode.COT_INJECTION
    dialect: TemplateDialect = TemplateDialect.GENERIC_CHAT_JSONL
    seed: int = 0
    noise_tables: int = 2
    db_id: str | None = None
    db_dir: Path | None = None


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise SlicelinkError(f"config file not found: {path}")
    data = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(data.decode("utf-8"))
        return json.loads(data)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: cannot parse config: {exc}") from exc


def budget_from_slice_token(slice_token: int) -> TokenBudget:
    """Budget carrying an explicitly chosen slice size."""
    return TokenBudget(max_token=slice_token + 1, model_token=1, slice_token=slice_token)


def build_pipeline_config(raw: dict) -> PipelineConfig:
    """Validate a merged config dict into a typed PipelineConfig.

    Referenced paths must exist; the budget must be feasible.
    """
    missing = [key for key in ("schema", "qa") if not raw.get(key)]
    if missing:
        raise SlicelinkError(f"config is missing required keys: {', '.join(missing)}")
    schema_path = Path(raw["schema"])
    qa_path = Path(raw["qa"])
    for label, path in (("schema", schema_path), ("qa", qa_path)):
        if not path.is_file():
            raise SlicelinkError(f"config {label} path does not exist: {path}")

    budget_raw = dict(raw.get("budget") or {})
    if budget_raw.get("slice_token"):
        budget = budget_from_slice_token(int(budget_raw["slice_token"]))
    elif budget_raw.get("max_token") and budget_raw.get("model_token") is not None:
        budget = derive_slice_budget(
            int(budget_raw["max_token"]),
            int(budget_raw["model_token"]),
            int(budget_raw.get("margin", 0)),
        )
    else:
        raise SlicelinkError(
            "config budget needs either slice_token or max_token and model_token"
        )

    counter_raw = dict(raw.get("counter") or {})
    kind = CounterKind(counter_raw.get("kind", CounterKind.HEURISTIC_WORDS.value))
    if kind is CounterKind.EXTERNAL_TABLE:
        table_path = counter_raw.get("table")
        if not table_path:
            raise SlicelinkError("external-table counter requires a 'table' path in config")
        if not Path(table_path).is_file():
            raise SlicelinkError(f"counter table does not exist: {table_path}")
        counter = TokenCounterSpec(kind=kind, external_counts=load_count_table(table_path))
    else:
        counter = TokenCounterSpec(kind=kind)

    backend_raw = dict(raw.get("backend") or {})
    backend_kwargs: dict = {"kind": BackendKind(backend_raw.get("kind", BackendKind.MOCK_ORACLE.value))}
    for key in ("endpoint", "model", "api_key_env"):
        if backend_raw.get(key) is not None:
            backend_kwargs[key] = backend_raw[key]
    for key, cast in (("timeout", float), ("max_inflight", int), ("retries", int), ("backoff", float)):
        if backend_raw.get(key) is not None:
            backend_kwargs[key] = cast(backend_raw[key])
    if backend_raw.get("replay") is not None:
        replay = Path(backend_raw["replay"])
        if not replay.is_file():
            raise SlicelinkError(f"replay file does not exist: {replay}")
        backend_kwargs["replay_path"] = str(replay)
    backend = BackendSpec(**backend_kwargs)

    db_dir = raw.get("db_dir")
    if db_dir is not None:
        db_dir = Path(db_dir)
        if not db_dir.is_dir():
            raise SlicelinkError(f"db_dir does not exist: {db_dir}")

    return PipelineConfig(
        schema_path=schema_path,
        qa_path=qa_path,
        out_dir=Path(raw.get("out_dir", "out")),
        budget=budget,
        counter=counter,
        backend=backend,
        mode=CompileMode(raw.get("mode", CompileMode.COT_INJECTION.value)),
        dialect=TemplateDialect(raw.get("dialect", TemplateDialect.GENERIC_CHAT_JSONL.value)),
        seed=int(raw.get("seed", 0)),
        noise_tables=int(raw.get("noise_tables", 2)),
        db_id=raw.get("db_id"),
        db_dir=db_dir,
    )
