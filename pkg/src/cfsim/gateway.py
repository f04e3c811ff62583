"""Uniform client for chat-completion and embedding endpoints.

Three transports share one interface: live HTTP, live-with-recording, and
replay from a JSON-lines transcript. Requests are keyed by a content hash of
(request_tag, model_id, canonical request body) with timestamps excluded, so
a prompt-template change invalidates old transcripts loudly instead of
silently answering from stale recordings.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Literal, Optional, Protocol, Sequence, TypeVar, Union

import httpx
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import (
    DimensionError,
    EmptyResponseError,
    LoadError,
    ReplayMissError,
    TransportError,
)

T = TypeVar("T")
U = TypeVar("U")


class ChatMessage(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Literal["system", "user", "assistant"]
    content: str


class ChatRequest(BaseModel):
    """One chat-completion request, tagged with the pipeline stage name."""

    model_config = ConfigDict(frozen=True)

    model_id: str = Field(min_length=1)
    messages: list[ChatMessage]
    temperature: float = Field(ge=0.0)
    max_tokens: int = Field(gt=0)
    request_tag: str = Field(min_length=1)

    @model_validator(mode="after")
    def _first_role(self) -> "ChatRequest":
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("first message role must be system or user")
        return self

    def body(self) -> dict:
        return {
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


class EmbeddingVector(BaseModel):
    model_config = ConfigDict(frozen=True)

    values: list[float]
    model_id: str


class TranscriptEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: str
    kind: Literal["chat", "embedding"]
    response: Union[str, list[float]]
    recorded_at: datetime


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_key(tag: str, model_id: str, body: dict) -> str:
    payload = canonical_json({"tag": tag, "model_id": model_id, "body": body})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def chat_key(req: ChatRequest) -> str:
    return request_key(req.request_tag, req.model_id, req.body())


def embed_key(text: str, model_id: str) -> str:
    return request_key("embed", model_id, {"text": text})


class RetryPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_retries: int = Field(default=2, ge=0)
    backoff_s: float = Field(default=0.5, ge=0.0)


class Transport(Protocol):
    def chat(self, key: str, req: ChatRequest) -> str: ...

    def embed(self, key: str, text: str, model_id: str) -> list[float]: ...


class LiveTransport:
    """HTTP transport speaking the common chat-completions/embeddings dialect.

    Retries transient failures (connection errors, HTTP 429 and 5xx) up to
    the configured count with linear backoff.
    """

    def __init__(
        self,
        endpoint_url: str,
        api_key: str = "",
        retry: Optional[RetryPolicy] = None,
        client: Optional[httpx.Client] = None,
    ):
        self.endpoint_url = endpoint_url.rstrip("/")
        self.retry = retry or RetryPolicy()
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(headers=headers, timeout=60.0)

    def _post(self, path: str, payload: dict) -> dict:
        last_error: Optional[Exception] = None
        for attempt in range(self.retry.max_retries + 1):
            if attempt:
                time.sleep(self.retry.backoff_s * attempt)
            try:
                response = self._client.post(f"{self.endpoint_url}{path}", json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = TransportError(
                    f"HTTP {response.status_code} from {path}"
                )
                continue
            if response.status_code >= 400:
                raise TransportError(
                    f"HTTP {response.status_code} from {path}: {response.text[:200]}"
                )
            return response.json()
        raise TransportError(
            f"request to {path} failed after {self.retry.max_retries} retries: {last_error}"
        )

    def chat(self, key: str, req: ChatRequest) -> str:
        data = self._post(
            "/chat/completions",
            {
                "model": req.model_id,
                "messages": [{"role": m.role, "content": m.content} for m in req.messages],
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
            },
        )
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat response: {exc}") from exc

    def embed(self, key: str, text: str, model_id: str) -> list[float]:
        data = self._post("/embeddings", {"model": model_id, "input": text})
        try:
            return [float(v) for v in data["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed embedding response: {exc}") from exc


class CallableTransport:
    """Transport backed by plain functions; used for scripted/offline models."""

    def __init__(
        self,
        chat_fn: Callable[[ChatRequest], str],
        embed_fn: Callable[[str, str], list[float]],
    ):
        self._chat_fn = chat_fn
        self._embed_fn = embed_fn

    def chat(self, key: str, req: ChatRequest) -> str:
        return self._chat_fn(req)

    def embed(self, key: str, text: str, model_id: str) -> list[float]:
        return self._embed_fn(text, model_id)


class ReplayTransport:
    """Answers every request from a loaded transcript; no network, no state."""

    def __init__(self, entries: dict[str, TranscriptEntry]):
        self._entries = entries

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ReplayTransport":
        return cls(load_transcript(path))

    def chat(self, key: str, req: ChatRequest) -> str:
        entry = self._entries.get(key)
        if entry is None or entry.kind != "chat":
            raise ReplayMissError(key)
        assert isinstance(entry.response, str)
        return entry.response

    def embed(self, key: str, text: str, model_id: str) -> list[float]:
        entry = self._entries.get(key)
        if entry is None or entry.kind != "embedding":
            raise ReplayMissError(key)
        assert isinstance(entry.response, list)
        return entry.response


def load_transcript(path: Union[str, Path]) -> dict[str, TranscriptEntry]:
    entries: dict[str, TranscriptEntry] = {}
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = TranscriptEntry.model_validate_json(line)
            except Exception as exc:
                raise LoadError(
                    f"bad transcript line: {exc}", path=str(path), line_no=line_no
                ) from exc
            if entry.key in entries:
                raise LoadError(
                    f"duplicate transcript key {entry.key}",
                    path=str(path), line_no=line_no,
                )
            entries[entry.key] = entry
    return entries


class TranscriptRecorder:
    """Serialized append-only writer; the first response for a key wins."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._seen: set[str] = set()
        if self.path.exists():
            self._seen = set(load_transcript(self.path))

    def record(self, key: str, kind: Literal["chat", "embedding"],
               response: Union[str, list[float]]) -> None:
        with self._lock:
            if key in self._seen:
                return
            entry = TranscriptEntry(
                key=key, kind=kind, response=response,
                recorded_at=datetime.now(timezone.utc),
            )
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(entry.model_dump_json() + "\n")
            self._seen.add(key)


class Gateway:
    """Shared client for all pipeline stages.

    Thread-safe: transcript writes and the embedding-dimension guard are
    serialized; replay lookups are lock-free.
    """

    def __init__(
        self,
        transport: Transport,
        recorder: Optional[TranscriptRecorder] = None,
        max_concurrency: int = 4,
    ):
        self.transport = transport
        self.recorder = recorder
        self.max_concurrency = max(1, max_concurrency)
        self._dim_lock = threading.Lock()
        self._embedding_dim: Optional[int] = None

    def complete_chat(self, req: ChatRequest) -> str:
        key = chat_key(req)
        text = self.transport.chat(key, req)
        if not text.strip():
            raise EmptyResponseError(f"empty model response for tag {req.request_tag}")
        if self.recorder is not None:
            self.recorder.record(key, "chat", text)
        return text

    def embed_text(self, text: str, model_id: str) -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        key = embed_key(text, model_id)
        values = self.transport.embed(key, text, model_id)
        with self._dim_lock:
            if self._embedding_dim is None:
                self._embedding_dim = len(values)
            elif self._embedding_dim != len(values):
                raise DimensionError(
                    f"embedding length {len(values)} differs from earlier "
                    f"vectors of length {self._embedding_dim}"
                )
        if self.recorder is not None:
            self.recorder.record(key, "embedding", values)
        return EmbeddingVector(values=values, model_id=model_id)

    def map_ordered(self, fn: Callable[[T], U], items: Sequence[T]) -> list[U]:
        """Apply fn to items with bounded concurrency, results in input order."""
        if self.max_concurrency == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.max_concurrency) as executor:
            return list(executor.map(fn, items))

    def map_chat(self, reqs: Sequence[ChatRequest]) -> list[Union[str, Exception]]:
        """Run a batch of chat requests with the in-flight cap.

        Per-item failures come back as exception values so one bad item never
        aborts the batch. Responses are joined, then recorded, in request
        order, which keeps transcript files deterministic.
        """
        def attempt(req: ChatRequest) -> Union[str, Exception]:
            try:
                key = chat_key(req)
                text = self.transport.chat(key, req)
                if not text.strip():
                    raise EmptyResponseError(
                        f"empty model response for tag {req.request_tag}"
                    )
                return text
            except Exception as exc:
                return exc

        results = self.map_ordered(attempt, reqs)
        if self.recorder is not None:
            for req, result in zip(reqs, results):
                if isinstance(result, str):
                    self.recorder.record(chat_key(req), "chat", result)
        return results

    def map_embed(self, texts: Sequence[str], model_id: str) -> list[EmbeddingVector]:
        """Embed a batch of texts; results and transcript entries in input order."""
        def attempt(text: str) -> list[float]:
            return self.transport.embed(embed_key(text, model_id), text, model_id)

        results = self.map_ordered(attempt, texts)
        vectors: list[EmbeddingVector] = []
        for text, values in zip(texts, results):
            with self._dim_lock:
                if self._embedding_dim is None:
                    self._embedding_dim = len(values)
                elif self._embedding_dim != len(values):
                    raise DimensionError(
                        f"embedding length {len(values)} differs from earlier "
                        f"vectors of length {self._embedding_dim}"
                    )
            if self.recorder is not None:
                self.recorder.record(embed_key(text, model_id), "embedding", values)
            vectors.append(EmbeddingVector(values=values, model_id=model_id))
        return vectors
