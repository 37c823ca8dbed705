"""Token-budgeted schema slicing and slice-wise schema linking for text-to-SQL.

The pipeline: parse a database schema, group its tables by foreign-key
connectivity, pack the groups into token-budgeted slices, compile chat-format
training datasets from those slices, run the slice-wise inference loop
against a pluggable model backend, and score the predictions.
"""

from .backends import (
    Backend,
    BackendKind,
    BackendSpec,
    HttpChatBackend,
    MockOracleBackend,
    ScriptedReplayBackend,
    make_backend,
)
from .config import PipelineConfig, build_pipeline_config
from .ddl import parse_ddl
from .errors import (
    BackendError,
    BackendTransportError,
    BudgetError,
    CompileError,
    DdlSyntaxError,
    GoldExecutionError,
    JoinError,
    OversizeTableError,
    ParseError,
    SchemaValidationError,
    SlicelinkError,
    UncountedTextError,
)
from .inference import (
    PipelineResult,
    SqlPrediction,
    TablePrediction,
    generate_sql,
    parse_table_response,
    predict_tables,
    run_pipeline,
)
from .metrics import (
    MetricsReport,
    SqlMetrics,
    TableMetrics,
    build_report,
    exact_match,
    execution_accuracy,
    table_metrics,
)
from .schema import (
    ColumnDef,
    CorrelationGroup,
    DatabaseSchema,
    ForeignKey,
    GroupPartition,
    TableDef,
    group_by_foreign_keys,
    load_schema_json,
    render_ddl,
    render_table,
)
from .sft import (
    CompileMode,
    QAExample,
    SftRecord,
    TemplateDialect,
    compile_schema_link,
    compile_sql_generation,
    load_qa_jsonl,
    render_template,
    split_examples,
)
from .slicing import Slice, SliceSet, build_slices, reslice, validate_slices
from .tokens import (
    CounterKind,
    TokenBudget,
    TokenCounterSpec,
    count_tokens,
    derive_slice_budget,
)

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendError",
    "BackendKind",
    "BackendSpec",
    "BackendTransportError",
    "BudgetError",
    "ColumnDef",
    "CompileError",
    "CompileMode",
    "CorrelationGroup",
    "CounterKind",
    "DatabaseSchema",
    "DdlSyntaxError",
    "ForeignKey",
    "GoldExecutionError",
    "GroupPartition",
    "HttpChatBackend",
    "JoinError",
    "MetricsReport",
    "MockOracleBackend",
    "OversizeTableError",
    "ParseError",
    "PipelineConfig",
    "PipelineResult",
    "QAExample",
    "SchemaValidationError",
    "ScriptedReplayBackend",
    "SftRecord",
    "Slice",
    "SliceSet",
    "SlicelinkError",
    "SqlMetrics",
    "SqlPrediction",
    "TableDef",
    "TableMetrics",
    "TablePrediction",
    "TemplateDialect",
    "TokenBudget",
    "TokenCounterSpec",
    "UncountedTextError",
    "build_pipeline_config",
    "build_report",
    "build_slices",
    "compile_schema_link",
    "compile_sql_generation",
    "count_tokens",
    "derive_slice_budget",
    "exact_match",
    "execution_accuracy",
    "generate_sql",
    "group_by_foreign_keys",
    "load_qa_jsonl",
    "load_schema_json",
    "make_backend",
    "parse_ddl",
    "parse_table_response",
    "predict_tables",
    "render_ddl",
    "render_table",
    "render_template",
    "reslice",
    "run_pipeline",
    "split_examples",
    "table_metrics",
    "validate_slices",
]
