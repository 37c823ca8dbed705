"""Command-line frontend: slice, gen-dataset, infer, eval, pipeline.

All commands read one TOML or JSON config file; any flag given on the
command line overrides the corresponding config value. Exit codes: 0
success, 1 usage, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backends import make_backend
from .config import PipelineConfig, budget_from_slice_token, build_pipeline_config, read_config_file
from .ddl import parse_ddl
from .errors import BackendError, SlicelinkError
from .inference import (
    mean_question_latency,
    read_sql_predictions,
    read_table_predictions,
    run_pipeline,
    write_sql_predictions,
    write_table_predictions,
)
from .metrics import build_report, format_report, report_to_json
from .schema import DatabaseSchema, group_by_foreign_keys, load_schema_json
from .sft import (
    CompileMode,
    TemplateDialect,
    compile_schema_link,
    compile_sql_generation,
    load_qa_jsonl,
    split_examples,
    write_qa_jsonl,
    write_records,
)
from .slicing import SliceSet, build_slices, read_slice_set, write_slice_set

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code on bad arguments."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slicelink", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("-c", "--config", help="TOML or JSON config file")
        p.add_argument("--schema", help="schema file: native JSON, catalog JSON, or .sql DDL")
        p.add_argument("--qa", help="question/answer JSONL file")
        p.add_argument("-o", "--out-dir", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="seed for splits and noise sampling")
        p.add_argument("--mode", choices=[m.value for m in CompileMode], help="compilation/inference mode")
        p.add_argument("--dialect", choices=[d.value for d in TemplateDialect], help="training record dialect")
        p.add_argument("--db-id", help="select this entry from a catalog schema file")
        p.add_argument("--slice-token", type=int, help="explicit slice budget in tokens")
        p.add_argument("--max-token", type=int, help="per-instance token capacity")
        p.add_argument("--model-token", type=int, help="template overhead in tokens")
        p.add_argument("--margin", type=int, help="extra slack subtracted from the slice budget")
        p.add_argument(
            "--counter",
            choices=["heuristic-words", "bytes-quarter", "external-table"],
            help="token counter kind",
        )
        p.add_argument("--counter-table", help="JSONL count table for the external-table counter")
        p.add_argument(
            "--backend",
            choices=["mock-oracle", "scripted-replay", "http-chat"],
            help="language-model backend kind",
        )
        p.add_argument("--endpoint", help="chat-completions endpoint URL")
        p.add_argument("--model", help="model name sent to the endpoint")
        p.add_argument("--timeout", type=float, help="per-request timeout in seconds")
        p.add_argument("--max-inflight", type=int, help="concurrent questions limit")
        p.add_argument("--retries", type=int, help="per-call retry count")
        p.add_argument("--backoff", type=float, help="base retry backoff in seconds")
        p.add_argument("--api-key-env", help="environment variable holding the API key")
        p.add_argument("--replay", help="scripted-replay responses JSONL")
        p.add_argument("--db-dir", help="directory of SQLite files, one per db_id")

    p_slice = sub.add_parser("slice", help="partition the schema into token-budgeted slices")
    common(p_slice)
    p_slice.add_argument("--allow-oversize", action="store_true", help="emit flagged slices for oversize tables")
    p_slice.add_argument("--sweep", help="comma-separated slice_token values; writes a CSV of slice counts")
    p_slice.set_defaults(func=cmd_slice)

    p_gen = sub.add_parser("gen-dataset", help="compile training datasets with a 9:1 split")
    common(p_gen)
    p_gen.add_argument("--slices", help="reuse an existing slice-set JSON instead of rebuilding")
    p_gen.add_argument("--sql", action="store_true", help="also compile the SQL-generation dataset")
    p_gen.add_argument("--noise-tables", type=int, help="random non-gold tables per SQL-generation record")
    p_gen.add_argument("--predicted-tables", help="predictions JSONL supplying explicit context tables")
    p_gen.set_defaults(func=cmd_gen_dataset)

    p_infer = sub.add_parser("infer", help="run slice-wise table prediction against the backend")
    common(p_infer)
    p_infer.add_argument("--slices", help="reuse an existing slice-set JSON instead of rebuilding")
    p_infer.add_argument("--with-sql", action="store_true", help="also generate SQL from predicted tables")
    p_infer.set_defaults(func=cmd_infer)

    p_eval = sub.add_parser("eval", help="score predictions against the gold file")
    common(p_eval)
    p_eval.add_argument("--predictions", help="table predictions JSONL (default: OUT/table_predictions.jsonl)")
    p_eval.add_argument("--sql-predictions", help="SQL predictions JSONL (default: OUT/sql_predictions.jsonl if present)")
    p_eval.set_defaults(func=cmd_eval)

    p_pipe = sub.add_parser("pipeline", help="slice, gen-dataset, infer and eval in one run")
    common(p_pipe)
    p_pipe.add_argument("--allow-oversize", action="store_true", help="emit flagged slices for oversize tables")
    p_pipe.add_argument("--sql", action="store_true", help="include SQL generation and SQL metrics")
    p_pipe.add_argument("--noise-tables", type=int, help="random non-gold tables per SQL-generation record")
    p_pipe.set_defaults(func=cmd_pipeline)

    return parser


def _raw_config(args: argparse.Namespace) -> dict:
    raw = read_config_file(args.config) if args.config else {}

    def setif(key: str, value) -> None:
        if value is not None:
            raw[key] = value

    setif("schema", args.schema)
    setif("qa", args.qa)
    setif("out_dir", args.out_dir)
    setif("seed", args.seed)
    setif("mode", args.mode)
    setif("dialect", args.dialect)
    setif("db_id", args.db_id)
    setif("db_dir", args.db_dir)
    setif("noise_tables", getattr(args, "noise_tables", None))

    budget = dict(raw.get("budget") or {})
    if args.slice_token is not None:
        budget = {"slice_token": args.slice_token}
    elif any(v is not None for v in (args.max_token, args.model_token, args.margin)):
        budget.pop("slice_token", None)
        for key, value in (("max_token", args.max_token), ("model_token", args.model_token), ("margin", args.margin)):
            if value is not None:
                budget[key] = value
    raw["budget"] = budget

    counter = dict(raw.get("counter") or {})
    if args.counter is not None:
        counter["kind"] = args.counter
    if args.counter_table is not None:
        counter["table"] = args.counter_table
    raw["counter"] = counter

    backend = dict(raw.get("backend") or {})
    for key, value in (
        ("kind", args.backend),
        ("endpoint", args.endpoint),
        ("model", args.model),
        ("timeout", args.timeout),
        ("max_inflight", args.max_inflight),
        ("retries", args.retries),
        ("backoff", args.backoff),
        ("api_key_env", args.api_key_env),
        ("replay", args.replay),
    ):
        if value is not None:
            backend[key] = value
    raw["backend"] = backend
    return raw


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    return build_pipeline_config(_raw_config(args))


def _load_schema(cfg: PipelineConfig) -> DatabaseSchema:
    if cfg.schema_path.suffix.lower() in (".sql", ".ddl"):
        return parse_ddl(cfg.schema_path.read_text(encoding="utf-8"), db_id=cfg.db_id or cfg.schema_path.stem)
    return load_schema_json(cfg.schema_path, db_id=cfg.db_id)


def _build_slices(cfg: PipelineConfig, schema: DatabaseSchema, allow_oversize: bool = False) -> SliceSet:
    partition = group_by_foreign_keys(schema)
    return build_slices(schema, partition, cfg.budget, cfg.counter, allow_oversize=allow_oversize)


def _get_slices(args: argparse.Namespace, cfg: PipelineConfig, schema: DatabaseSchema) -> SliceSet:
    slices_path = getattr(args, "slices", None)
    if slices_path:
        return read_slice_set(slices_path, counter=cfg.counter)
    return _build_slices(cfg, schema, allow_oversize=getattr(args, "allow_oversize", False))


def _config_echo(cfg: PipelineConfig) -> dict:
    return {
        "mode": cfg.mode.value,
        "seed": cfg.seed,
        "slice_token": cfg.budget.slice_token,
        "counter": cfg.counter.kind.value,
        "backend": cfg.backend.kind.value,
    }


def _dataset_suffix(dialect: TemplateDialect) -> str:
    return ".jsonl" if dialect is TemplateDialect.GENERIC_CHAT_JSONL else ".txt"


def cmd_slice(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    schema = _load_schema(cfg)
    partition = group_by_foreign_keys(schema)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    if args.sweep:
        values = [int(v) for v in args.sweep.split(",") if v.strip()]
        if not values:
            raise SlicelinkError("--sweep needs at least one slice_token value")
        lines = ["slice_token,total_w"]
        for slice_token in values:
            budget = budget_from_slice_token(slice_token)
            sliced = build_slices(schema, partition, budget, cfg.counter, allow_oversize=args.allow_oversize)
            lines.append(f"{slice_token},{len(sliced)}")
        csv_text = "\n".join(lines) + "\n"
        sweep_path = cfg.out_dir / "slice_sweep.csv"
        sweep_path.write_text(csv_text, encoding="utf-8")
        print(csv_text, end="")
        print(f"wrote {sweep_path}")
        return EXIT_OK

    sliced = build_slices(schema, partition, cfg.budget, cfg.counter, allow_oversize=args.allow_oversize)
    out_path = cfg.out_dir / "slices.json"
    write_slice_set(out_path, sliced)
    print(f"total(w) = {len(sliced)}")
    for sl in sliced.slices:
        flag = " [oversize]" if sl.oversize else ""
        print(f"  slice {sl.slice_index}: {sl.token_count} tokens, {len(sl.table_names)} tables{flag}")
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_gen_dataset(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    schema = _load_schema(cfg)
    examples = load_qa_jsonl(cfg.qa_path)
    sliced = _get_slices(args, cfg, schema)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    suffix = _dataset_suffix(cfg.dialect)

    train, valid = split_examples(examples, seed=cfg.seed)
    write_qa_jsonl(cfg.out_dir / "qa_train.jsonl", train)
    write_qa_jsonl(cfg.out_dir / "qa_valid.jsonl", valid)
    print(f"split {len(examples)} examples into {len(train)} train / {len(valid)} valid (seed {cfg.seed})")

    for name, part in (("train", train), ("valid", valid)):
        records = compile_schema_link(part, sliced, cfg.mode)
        path = cfg.out_dir / f"schema_link_{name}{suffix}"
        write_records(path, records, cfg.dialect)
        print(f"schema_link {name}: {len(records)} records -> {path}")

    if args.sql:
        predicted = None
        if args.predicted_tables:
            predicted = {
                str(p["question_id"]): list(p.get("predicted_tables", ()))
                for p in read_table_predictions(args.predicted_tables)
            }
        for name, part in (("train", train), ("valid", valid)):
            records = compile_sql_generation(
                part, schema, noise_tables=cfg.noise_tables, seed=cfg.seed, predicted=predicted
            )
            path = cfg.out_dir / f"sql_gen_{name}{suffix}"
            write_records(path, records, cfg.dialect)
            print(f"sql_gen {name}: {len(records)} records -> {path}")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    schema = _load_schema(cfg)
    examples = load_qa_jsonl(cfg.qa_path)
    sliced = _get_slices(args, cfg, schema)
    backend = make_backend(cfg.backend, examples=examples, slices=sliced)
    results = run_pipeline(
        examples,
        sliced,
        backend,
        cfg.mode,
        schema=schema,
        with_sql=args.with_sql,
        max_inflight=cfg.backend.max_inflight,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    tp_path = cfg.out_dir / "table_predictions.jsonl"
    write_table_predictions(tp_path, results)
    print(f"wrote {tp_path}")
    if args.with_sql:
        sp_path = cfg.out_dir / "sql_predictions.jsonl"
        write_sql_predictions(sp_path, results)
        print(f"wrote {sp_path}")
    failed = sum(1 for r in results if r.table.failed)
    print(f"questions: {len(results)}, failed: {failed}")
    print(f"mean per-question latency: {mean_question_latency(results):.3f}s")
    if results and failed == len(results):
        print("error: every question failed", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    gold = load_qa_jsonl(cfg.qa_path)
    tp_path = Path(args.predictions) if args.predictions else cfg.out_dir / "table_predictions.jsonl"
    if not tp_path.is_file():
        raise SlicelinkError(f"table predictions not found: {tp_path}")
    predictions = read_table_predictions(tp_path)

    sql_predictions = None
    sp_path = Path(args.sql_predictions) if args.sql_predictions else cfg.out_dir / "sql_predictions.jsonl"
    if args.sql_predictions or sp_path.is_file():
        if not sp_path.is_file():
            raise SlicelinkError(f"SQL predictions not found: {sp_path}")
        sql_predictions = read_sql_predictions(sp_path)

    report = build_report(
        predictions,
        gold,
        sql_predictions=sql_predictions,
        db_dir=cfg.db_dir,
        config=_config_echo(cfg),
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    json_path = cfg.out_dir / "report.json"
    text_path = cfg.out_dir / "report.txt"
    json_path.write_text(report_to_json(report), encoding="utf-8")
    text = format_report(report)
    text_path.write_text(text, encoding="utf-8")
    print(text, end="")
    print(f"wrote {json_path} and {text_path}")
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    schema = _load_schema(cfg)
    examples = load_qa_jsonl(cfg.qa_path)
    partition = group_by_foreign_keys(schema)
    sliced = build_slices(schema, partition, cfg.budget, cfg.counter, allow_oversize=args.allow_oversize)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_slice_set(cfg.out_dir / "slices.json", sliced)
    print(f"total(w) = {len(sliced)}")

    suffix = _dataset_suffix(cfg.dialect)
    train, valid = split_examples(examples, seed=cfg.seed)
    write_qa_jsonl(cfg.out_dir / "qa_train.jsonl", train)
    write_qa_jsonl(cfg.out_dir / "qa_valid.jsonl", valid)
    for name, part in (("train", train), ("valid", valid)):
        records = compile_schema_link(part, sliced, cfg.mode)
        write_records(cfg.out_dir / f"schema_link_{name}{suffix}", records, cfg.dialect)
        print(f"schema_link {name}: {len(records)} records")
        if args.sql:
            sql_records = compile_sql_generation(part, schema, noise_tables=cfg.noise_tables, seed=cfg.seed)
            write_records(cfg.out_dir / f"sql_gen_{name}{suffix}", sql_records, cfg.dialect)
            print(f"sql_gen {name}: {len(sql_records)} records")

    backend = make_backend(cfg.backend, examples=examples, slices=sliced)
    results = run_pipeline(
        examples,
        sliced,
        backend,
        cfg.mode,
        schema=schema,
        with_sql=args.sql,
        max_inflight=cfg.backend.max_inflight,
    )
    write_table_predictions(cfg.out_dir / "table_predictions.jsonl", results)
    if args.sql:
        write_sql_predictions(cfg.out_dir / "sql_predictions.jsonl", results)
    print(f"mean per-question latency: {mean_question_latency(results):.3f}s")

    sql_predictions = None
    if args.sql:
        sql_predictions = read_sql_predictions(cfg.out_dir / "sql_predictions.jsonl")
    report = build_report(
        read_table_predictions(cfg.out_dir / "table_predictions.jsonl"),
        examples,
        sql_predictions=sql_predictions,
        db_dir=cfg.db_dir,
        config=_config_echo(cfg),
    )
    (cfg.out_dir / "report.json").write_text(report_to_json(report), encoding="utf-8")
    text = format_report(report)
    (cfg.out_dir / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_USAGE
    try:
        return args.func(args)
    except BackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (SlicelinkError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
