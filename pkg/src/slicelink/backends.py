"""Language-model backends behind a single chat-completion interface.

Three kinds: a gold-knowledge oracle and a scripted replay for tests and
reproducible runs, plus an OpenAI-compatible HTTP client for real models.
Backends must be safe to share across concurrent question workers.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import httpx

from .errors import BackendError, BackendTransportError, ParseError
from .sft import NONE_SENTINEL, QAExample
from .slicing import SliceSet

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "LR_SQL_API_KEY"

# Replay key for the SQL-generation call (which has no slice).
SQL_CALL_INDEX = -1


class BackendKind(str, Enum):
    MOCK_ORACLE = "mock-oracle"
    SCRIPTED_REPLAY = "scripted-replay"
    HTTP_CHAT = "http-chat"


@dataclass(frozen=True)
class BackendSpec:
    kind: BackendKind
    endpoint: str | None = None
    model: str | None = None
    timeout: float = 30.0
    max_inflight: int = 1
    retries: int = 2
    backoff: float = 0.25
    api_key_env: str = DEFAULT_API_KEY_ENV
    replay_path: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.kind is BackendKind.HTTP_CHAT and not self.endpoint:
            raise ValueError("http-chat backend requires an endpoint")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


class Backend:
    """One chat completion per call; raises BackendError on failure."""

    spec: BackendSpec

    def complete(
        self,
        messages: Sequence[Mapping[str, str]],
        question_id: str | None = None,
        slice_index: int | None = None,
    ) -> str:
        raise NotImplementedError


@dataclass
class MockOracleBackend(Backend):
    """Answers schema-link prompts from gold knowledge, SQL prompts with gold SQL.

    Closes the loop for end-to-end tests: with this backend, predicted
    tables equal the gold tables for every question.
    """

    gold_tables: Mapping[str, tuple[str, ...]]
    gold_sql: Mapping[str, str]
    slices: SliceSet
    spec: BackendSpec = field(default_factory=lambda: BackendSpec(kind=BackendKind.MOCK_ORACLE))

    @classmethod
    def from_examples(
        cls, examples: Sequence[QAExample], slices: SliceSet, spec: BackendSpec | None = None
    ) -> "MockOracleBackend":
        return cls(
            gold_tables={e.question_id: tuple(e.gold_tables) for e in examples},
            gold_sql={e.question_id: e.gold_sql for e in examples},
            slices=slices,
            spec=spec or BackendSpec(kind=BackendKind.MOCK_ORACLE),
        )

    def complete(
        self,
        messages: Sequence[Mapping[str, str]],
        question_id: str | None = None,
        slice_index: int | None = None,
    ) -> str:
        if question_id is None:
            raise BackendError("mock-oracle backend needs a question_id")
        if slice_index is None or slice_index == SQL_CALL_INDEX:
            try:
                return self.gold_sql[question_id]
            except KeyError:
                raise BackendError(f"mock-oracle has no gold SQL for question '{question_id}'") from None
        try:
            gold = self.gold_tables[question_id]
        except KeyError:
            raise BackendError(f"mock-oracle has no gold tables for question '{question_id}'") from None
        slice_names = self.slices.slices[slice_index].table_names
        gold_ci = {g.lower() for g in gold}
        here = [name for name in slice_names if name.lower() in gold_ci]
        return ", ".join(here) if here else NONE_SENTINEL


@dataclass
class ScriptedReplayBackend(Backend):
    """Replays canned responses keyed by (question_id, slice_index).

    A missing key raises a transport error, so fixtures simulate a
    permanently failing backend by omitting keys. Every request is recorded
    under a lock for later inspection.
    """

    responses: Mapping[tuple[str, int], str]
    spec: BackendSpec = field(default_factory=lambda: BackendSpec(kind=BackendKind.SCRIPTED_REPLAY))

    def __post_init__(self) -> None:
        self.requests: list[tuple[str | None, int | None, tuple[dict, ...]]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_jsonl(cls, path: str | Path, spec: BackendSpec | None = None) -> "ScriptedReplayBackend":
        """Load responses: JSONL of {"question_id", "slice_index", "response"}.

        slice_index -1 keys the SQL-generation call.
        """
        responses: dict[tuple[str, int], str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                responses[(str(raw["question_id"]), int(raw["slice_index"]))] = raw["response"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad replay record: {exc}") from exc
        return cls(responses=responses, spec=spec or BackendSpec(kind=BackendKind.SCRIPTED_REPLAY))

    def complete(
        self,
        messages: Sequence[Mapping[str, str]],
        question_id: str | None = None,
        slice_index: int | None = None,
    ) -> str:
        with self._lock:
            self.requests.append((question_id, slice_index, tuple(dict(m) for m in messages)))
        key = (question_id or "", SQL_CALL_INDEX if slice_index is None else slice_index)
        try:
            return self.responses[key]
        except KeyError:
            raise BackendTransportError(f"no scripted response for {key}") from None

    def requests_for(self, question_id: str) -> list[tuple[int | None, tuple[dict, ...]]]:
        with self._lock:
            return [(si, msgs) for qid, si, msgs in self.requests if qid == question_id]


class HttpChatBackend(Backend):
    """OpenAI-compatible chat-completions client.

    The API key is read from the environment variable named by the spec
    (default LR_SQL_API_KEY); requests without a key omit the Authorization
    header. Transport and HTTP errors surface as BackendTransportError for
    the caller's retry loop. httpx.Client is thread-safe, so one backend
    serves all workers.
    """

    def __init__(self, spec: BackendSpec, transport: httpx.BaseTransport | None = None) -> None:
        self.spec = spec
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(spec.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=spec.timeout, headers=headers, transport=transport)

    def complete(
        self,
        messages: Sequence[Mapping[str, str]],
        question_id: str | None = None,
        slice_index: int | None = None,
    ) -> str:
        payload: dict = {"messages": [dict(m) for m in messages], "temperature": 0}
        if self.spec.model:
            payload["model"] = self.spec.model
        try:
            response = self._client.post(self.spec.endpoint or "", json=payload)
            response.raise_for_status()
            data = response.json()
        except httpx.HTTPError as exc:
            raise BackendTransportError(f"chat request failed: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BackendTransportError(f"chat response is not JSON: {exc}") from exc
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {exc}") from exc
        if not isinstance(content, str):
            raise BackendError("chat response content is not text")
        return content

    def close(self) -> None:
        self._client.close()


def make_backend(
    spec: BackendSpec,
    examples: Sequence[QAExample] | None = None,
    slices: SliceSet | None = None,
    transport: httpx.BaseTransport | None = None,
) -> Backend:
    """Instantiate the backend a spec describes.

    mock-oracle needs examples and slices; scripted-replay needs
    spec.replay_path; http-chat accepts an optional httpx transport for
    testing.
    """
    if spec.kind is BackendKind.MOCK_ORACLE:
        if examples is None or slices is None:
            raise ValueError("mock-oracle backend requires examples and slices")
        return MockOracleBackend.from_examples(examples, slices, spec=spec)
    if spec.kind is BackendKind.SCRIPTED_REPLAY:
        if not spec.replay_path:
            raise ValueError("scripted-replay backend requires replay_path")
        return ScriptedReplayBackend.from_jsonl(spec.replay_path, spec=spec)
    return HttpChatBackend(spec, transport=transport)
