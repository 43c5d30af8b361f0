"""Minimal chat-completion client plus fixture record/replay.

Requests go to ``{base_url}/chat/completions`` with bearer auth.  Fixtures
are raw response bodies stored as ``<sha256 of the request body>.json`` so a
replay follows the same parsing path as a live call.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol
from urllib.parse import urlparse

import httpx

from .errors import LlmFormatError, LlmTransportError

ENV_BASE_URL = "LORE_LLM_BASE_URL"
ENV_API_KEY = "LORE_LLM_API_KEY"
ENV_MODEL = "LORE_LLM_MODEL"


@dataclass(frozen=True)
class LlmEndpoint:
    base_url: str
    model: str
    api_key: str = field(repr=False)
    timeout: float = 60.0

    def __post_init__(self):
        parsed = urlparse(self.base_url)
        if not (parsed.scheme in ("http", "https") and parsed.netloc):
            raise ValueError(f"base_url must be an absolute http(s) URL, got {self.base_url!r}")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, timeout: float = 60.0) -> "LlmEndpoint":
        env = os.environ if env is None else env
        missing = [k for k in (ENV_BASE_URL, ENV_API_KEY, ENV_MODEL) if not env.get(k)]
        if missing:
            raise ValueError(f"missing environment variables: {', '.join(missing)}")
        return cls(env[ENV_BASE_URL], env[ENV_MODEL], env[ENV_API_KEY], timeout)

    def as_dict(self) -> dict:
        # never persist the key
        return {"base_url": self.base_url, "model": self.model, "timeout": self.timeout}


class ChatClient(Protocol):
    def complete(self, system: str, user: str) -> str: ...


def request_body(model: str, system: str, user: str) -> dict:
    return {
        "model": model,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
        "temperature": 0,
    }


def request_key(body: dict) -> str:
    canonical = json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_completion(raw: str) -> str:
    """Extract ``choices[0].message.content`` from a response body."""
    try:
        data = json.loads(raw)
        content = data["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError):
        raise LlmFormatError("response is not a chat-completion body", raw=raw) from None
    if not isinstance(content, str):
        raise LlmFormatError("message content is not a string", raw=raw)
    return content


class HttpChatClient:
    """Blocking client; at most ``max_in_flight`` requests run at once."""

    def __init__(
        self,
        endpoint: LlmEndpoint,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(timeout=endpoint.timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def body(self, system: str, user: str) -> dict:
        return request_body(self.endpoint.model, system, user)

    def complete_raw(self, body: dict) -> str:
        url = self.endpoint.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {self.endpoint.api_key}"}
        with self._slots:
            try:
                resp = self._client.post(url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                raise LlmTransportError(f"request to {url} failed: {exc}") from exc
        if resp.status_code >= 400:
            raise LlmTransportError(f"{url} returned HTTP {resp.status_code}", raw=resp.text)
        return resp.text

    def complete(self, system: str, user: str) -> str:
        return parse_completion(self.complete_raw(self.body(system, user)))


class FixtureReplayClient:
    """Answers from recorded response bodies; never touches the network."""

    def __init__(self, directory: str | Path, model: str):
        self.directory = Path(directory)
        self.model = model

    def complete(self, system: str, user: str) -> str:
        key = request_key(request_body(self.model, system, user))
        path = self.directory / f"{key}.json"
        if not path.exists():
            raise LlmTransportError(f"no fixture for request {key} in {self.directory}")
        return parse_completion(path.read_text(encoding="utf-8"))


class RecordingClient:
    """Live client that also stores each raw response as a replay fixture."""

    def __init__(self, inner: HttpChatClient, directory: str | Path):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def complete(self, system: str, user: str) -> str:
        body = self.inner.body(system, user)
        raw = self.inner.complete_raw(body)
        (self.directory / f"{request_key(body)}.json").write_text(raw, encoding="utf-8")
        return parse_completion(raw)


def write_fixture(directory: str | Path, model: str, system: str, user: str, content: str) -> Path:
    """Store a canned chat-completion body answering (system, user)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    key = request_key(request_body(model, system, user))
    body = {"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}
    path = directory / f"{key}.json"
    path.write_text(json.dumps(body, sort_keys=True), encoding="utf-8")
    return path
