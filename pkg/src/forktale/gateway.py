"""Chat-completion gateway: backends, cassette record/replay, validated
structured output with bounded corrective retries.

Every response must match the request's JSON schema. On a mismatch the
gateway appends a corrective user message naming the violated constraint and
asks again, up to the retry limit (a total-attempt budget). Callers may add a
semantic check on top; those failures retry the same way under their own
budget and re-raise the last violation when it runs out.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol

import httpx
import jsonschema

from .errors import (
    CassetteMiss,
    ConfigError,
    PreconditionError,
    RequestTimeout,
    RetryableViolation,
    SchemaViolation,
    TransportError,
)
from .prompts import SchemaSpec

log = logging.getLogger(__name__)

CASSETTE_FORMAT_VERSION = 1
DEFAULT_RETRY_LIMIT = 3
DEFAULT_TIMEOUT_SECONDS = 60.0
DEFAULT_MAX_CONCURRENCY = 2
DEFAULT_MODEL_ID = "gpt-4"


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[Message, ...]
    schema: SchemaSpec
    temperature: float
    model_id: str = DEFAULT_MODEL_ID
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        if not any(m.role == "user" for m in self.messages):
            raise PreconditionError("request needs at least one user message")
        for m in self.messages:
            if m.role not in ("system", "user"):
                raise PreconditionError(f"unsupported message role {m.role!r}")


def request_messages(system_text: str, user_text: str) -> tuple[Message, ...]:
    return (Message("system", system_text), Message("user", user_text))


def fingerprint(request: CompletionRequest) -> str:
    """Stable identity of a request: messages, schema, model, temperature.

    max_output_tokens is excluded so an output-budget tweak still replays.
    """
    payload = {
        "messages": [[m.role, m.content] for m in request.messages],
        "model_id": request.model_id,
        "schema": request.schema.schema_document,
        "stage": request.schema.stage.value,
        "temperature": request.temperature,
    }
    canonical = json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResult:
    document: dict
    attempts: int
    fingerprint: str


class Backend(Protocol):
    def send(self, request: CompletionRequest) -> str: ...


# -- cassette -------------------------------------------------------------


class Cassette:
    """Fingerprint-keyed store of raw responses, one JSON file on disk.

    Writes are serialized and flushed through an atomic rename so a crash
    never leaves a half-written file.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self.path.exists():
            doc = json.loads(self.path.read_text(encoding="utf-8"))
            if doc.get("version") != CASSETTE_FORMAT_VERSION:
                raise ConfigError(
                    f"cassette {self.path} has version {doc.get('version')!r}, "
                    f"want {CASSETTE_FORMAT_VERSION}"
                )
            self._entries = doc["entries"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> str | None:
        entry = self._entries.get(key)
        return None if entry is None else entry["response"]

    def put(self, key: str, response: str) -> None:
        with self._lock:
            self._entries[key] = {
                "response": response,
                "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            }
            self._flush()

    def _flush(self) -> None:
        doc = {"version": CASSETTE_FORMAT_VERSION, "entries": self._entries}
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_text(
            json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        tmp.replace(self.path)


# -- backends -------------------------------------------------------------


class MockBackend:
    """Delegates to an in-process model function; no I/O."""

    def __init__(self, model: Callable[[CompletionRequest], str]):
        self._model = model

    def send(self, request: CompletionRequest) -> str:
        return self._model(request)


class ScriptedBackend:
    """Returns queued responses in order; used to script failure sequences."""

    def __init__(self, responses: list[str]):
        self._responses = list(responses)
        self.requests: list[CompletionRequest] = []

    def send(self, request: CompletionRequest) -> str:
        self.requests.append(request)
        if not self._responses:
            raise TransportError("scripted backend ran out of responses")
        return self._responses.pop(0)


class ReplayBackend:
    """Serves responses from a cassette; any miss is an error, never network."""

    def __init__(self, cassette: Cassette):
        self._cassette = cassette

    def send(self, request: CompletionRequest) -> str:
        key = fingerprint(request)
        response = self._cassette.get(key)
        if response is None:
            raise CassetteMiss(key)
        return response


class RecordBackend:
    """Passes through to an inner backend and persists every response."""

    def __init__(self, inner: Backend, cassette: Cassette):
        self._inner = inner
        self._cassette = cassette

    def send(self, request: CompletionRequest) -> str:
        response = self._inner.send(request)
        self._cassette.put(fingerprint(request), response)
        return response


class LiveBackend:
    """Talks to a chat-completions HTTP endpoint.

    ``endpoint`` is the full completions URL. The response schema rides in
    response_format as a strict JSON schema. The API key comes only from the
    named environment variable.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout_seconds: float = DEFAULT_TIMEOUT_SECONDS,
    ):
        if not endpoint:
            raise ConfigError("live backend needs an endpoint URL")
        key = os.environ.get(api_key_env, "")
        if not key:
            raise ConfigError(f"environment variable {api_key_env} is not set")
        self._endpoint = endpoint
        self._key = key
        self._timeout = timeout_seconds

    def send(self, request: CompletionRequest) -> str:
        payload = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "response_format": {
                "type": "json_schema",
                "json_schema": {
                    "name": request.schema.stage.value,
                    "schema": request.schema.schema_document,
                    "strict": True,
                },
            },
        }
        try:
            response = httpx.post(
                self._endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {self._key}"},
                timeout=self._timeout,
            )
        except httpx.TimeoutException as exc:
            raise RequestTimeout(f"no answer within {self._timeout}s") from exc
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code != 200:
            raise TransportError(
                f"endpoint returned {response.status_code}: {response.text[:300]}"
            )
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc


# -- configuration --------------------------------------------------------


class Mode(Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"
    MOCK = "mock"


@dataclass(frozen=True)
class BackendConfig:
    mode: Mode
    endpoint: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    cassette_path: str = ""
    retry_limit: int = DEFAULT_RETRY_LIMIT
    request_timeout: float = DEFAULT_TIMEOUT_SECONDS
    max_concurrency: int = DEFAULT_MAX_CONCURRENCY
    model_id: str = DEFAULT_MODEL_ID

    def __post_init__(self) -> None:
        if self.retry_limit < 1:
            raise ConfigError("retry limit must be at least 1")
        if self.mode in (Mode.LIVE, Mode.RECORD) and not self.endpoint:
            raise ConfigError(f"{self.mode.value} mode needs an endpoint")
        if self.mode in (Mode.RECORD, Mode.REPLAY) and not self.cassette_path:
            raise ConfigError(f"{self.mode.value} mode needs a cassette path")


def build_backend(
    config: BackendConfig,
    mock_model: Callable[[CompletionRequest], str] | None = None,
) -> Backend:
    if config.mode is Mode.MOCK:
        if mock_model is None:
            raise ConfigError("mock mode needs a model function")
        return MockBackend(mock_model)
    if config.mode is Mode.REPLAY:
        if not Path(config.cassette_path).exists():
            raise ConfigError(f"cassette {config.cassette_path} does not exist")
        return ReplayBackend(Cassette(config.cassette_path))
    live = LiveBackend(config.endpoint, config.api_key_env, config.request_timeout)
    if config.mode is Mode.LIVE:
        return live
    return RecordBackend(live, Cassette(config.cassette_path))


# -- gateway --------------------------------------------------------------


def _describe_schema_errors(errors: list[jsonschema.ValidationError]) -> list[str]:
    out = []
    for err in errors:
        path = "/".join(str(p) for p in err.absolute_path) or "$"
        out.append(f"{err.validator}@{path}: {err.message}")
    return out


@dataclass
class Gateway:
    """Validated structured completions over any backend."""

    backend: Backend
    retry_limit: int = DEFAULT_RETRY_LIMIT
    max_concurrency: int = DEFAULT_MAX_CONCURRENCY
    calls: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        self._semaphore = threading.Semaphore(self.max_concurrency)
        self._counter_lock = threading.Lock()

    @classmethod
    def from_config(
        cls,
        config: BackendConfig,
        mock_model: Callable[[CompletionRequest], str] | None = None,
    ) -> "Gateway":
        return cls(
            backend=build_backend(config, mock_model),
            retry_limit=config.retry_limit,
            max_concurrency=config.max_concurrency,
        )

    def _send(self, request: CompletionRequest) -> str:
        with self._semaphore:
            with self._counter_lock:
                self.calls += 1
            return self.backend.send(request)

    def complete_structured(
        self,
        request: CompletionRequest,
        semantic_check: Callable[[dict], None] | None = None,
        retry_limit: int | None = None,
        semantic_attempt_limit: int | None = None,
    ) -> CompletionResult:
        """Run the request until a response passes schema and semantic checks.

        ``retry_limit`` caps total attempts against the schema (parse errors
        included); ``semantic_attempt_limit`` caps how many semantically bad
        documents are tolerated (defaults to the retry limit). Each failure
        appends a corrective user message so the next attempt can fix it.
        """
        limit = retry_limit if retry_limit is not None else self.retry_limit
        semantic_limit = (
            semantic_attempt_limit if semantic_attempt_limit is not None else limit
        )
        if limit < 1 or semantic_limit < 1:
            raise PreconditionError("attempt limits must be at least 1")
        validator = jsonschema.Draft202012Validator(request.schema.schema_document)
        original_key = fingerprint(request)
        stage = request.schema.stage.value
        attempt_request = request
        attempts = 0
        schema_attempts = 0
        semantic_attempts = 0

        while True:
            attempts += 1
            raw = self._send(attempt_request)
            correction: str
            try:
                document = json.loads(raw)
            except json.JSONDecodeError as exc:
                schema_attempts += 1
                if schema_attempts >= limit:
                    raise SchemaViolation(
                        f"{stage}: response is not valid JSON after {attempts} attempts",
                        violations=[f"json@$: {exc}"],
                        attempts=attempts,
                    ) from exc
                correction = (
                    "The previous response was not valid JSON. "
                    "Respond with a single JSON object matching the schema."
                )
            else:
                errors = sorted(validator.iter_errors(document), key=str)
                if errors:
                    schema_attempts += 1
                    described = _describe_schema_errors(errors)
                    if schema_attempts >= limit:
                        raise SchemaViolation(
                            f"{stage}: response failed schema validation "
                            f"after {attempts} attempts: {described[0]}",
                            violations=described,
                            attempts=attempts,
                        )
                    correction = (
                        "The previous response violated the required schema: "
                        + "; ".join(described[:3])
                        + ". Respond again with a corrected JSON object."
                    )
                else:
                    if semantic_check is None:
                        return CompletionResult(document, attempts, original_key)
                    try:
                        semantic_check(document)
                    except RetryableViolation as exc:
                        semantic_attempts += 1
                        if semantic_attempts >= semantic_limit:
                            exc.attempts = attempts
                            raise
                        correction = f"{exc}. Respond again with a corrected JSON object."
                    else:
                        return CompletionResult(document, attempts, original_key)
            log.debug("%s attempt %d failed; retrying", stage, attempts)
            attempt_request = replace(
                attempt_request,
                messages=attempt_request.messages + (Message("user", correction),),
            )
