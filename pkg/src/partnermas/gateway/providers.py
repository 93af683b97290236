"""Provider implementations: scripted fixtures, HTTP chat endpoints, callables."""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Callable, Mapping

import httpx

from partnermas.gateway.core import (
    CompletionRequest,
    ProviderError,
    ProviderReply,
    Role,
    TransportError,
)

FIXTURE_SCHEMA_VERSION = 1

FixtureKey = tuple[str, str, str, int, bool]


class ScriptedProvider:
    """Replays stored responses keyed by (case_id, role, agent_name, turn, repair).

    Fixture file layout (JSON)::

        {"schema_version": 1,
         "fixtures": [{"case_id": "C0001", "role": "planner", "agent": "Planner",
                       "turn": 0, "repair": false, "text": "..."}]}
    """

    def __init__(self, fixtures: Mapping[FixtureKey, str], provider_id: str = "scripted") -> None:
        self.fixtures = dict(fixtures)
        self.provider_id = provider_id

    def send(self, request: CompletionRequest) -> ProviderReply:
        try:
            text = self.fixtures[request.fixture_key]
        except KeyError:
            raise ProviderError(f"no scripted fixture for {request.fixture_key}") from None
        return ProviderReply(text)

    @classmethod
    def load(cls, path: str | Path, provider_id: str = "scripted") -> ScriptedProvider:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        version = data.get("schema_version")
        if version != FIXTURE_SCHEMA_VERSION:
            raise ProviderError(f"{path}: unsupported fixture schema_version {version!r}")
        fixtures: dict[FixtureKey, str] = {}
        for item in data["fixtures"]:
            key = (item["case_id"], Role(item["role"]).value, item.get("agent", ""),
                   int(item.get("turn", 0)), bool(item.get("repair", False)))
            fixtures[key] = item["text"]
        return cls(fixtures, provider_id)


def dump_fixtures(fixtures: Mapping[FixtureKey, str], path: str | Path) -> Path:
    items = [
        {"case_id": k[0], "role": k[1], "agent": k[2], "turn": k[3], "repair": k[4], "text": fixtures[k]}
        for k in sorted(fixtures)
    ]
    path = Path(path)
    path.write_text(
        json.dumps({"schema_version": FIXTURE_SCHEMA_VERSION, "fixtures": items}, indent=1, ensure_ascii=False)
        + "\n",
        encoding="utf-8",
    )
    return path


class RecordingProvider:
    """Wraps another provider and keeps every reply as a scripted fixture."""

    def __init__(self, inner: Any) -> None:
        self.inner = inner
        self.provider_id = inner.provider_id
        self.recorded: dict[FixtureKey, str] = {}
        self._lock = threading.Lock()

    def send(self, request: CompletionRequest) -> ProviderReply:
        reply = self.inner.send(request)
        with self._lock:
            self.recorded[request.fixture_key] = reply.text
        return reply


class CallableProvider:
    """Adapts a plain function ``request -> text`` (or ``ProviderReply``)."""

    def __init__(self, fn: Callable[[CompletionRequest], str | ProviderReply], provider_id: str = "callable") -> None:
        self.fn = fn
        self.provider_id = provider_id

    def send(self, request: CompletionRequest) -> ProviderReply:
        out = self.fn(request)
        return out if isinstance(out, ProviderReply) else ProviderReply(out)


class HTTPChatProvider:
    """OpenAI-style ``/chat/completions`` endpoint.

    Credentials and endpoint come from ``PMAS_API_KEY_<NAME>`` and
    ``PMAS_ENDPOINT_<NAME>`` unless passed explicitly. ``options`` are sent
    through untouched (for example ``{"reasoning_effort": "medium"}``).
    """

    def __init__(
        self,
        name: str,
        model: str,
        *,
        endpoint: str | None = None,
        api_key: str | None = None,
        options: Mapping[str, Any] | None = None,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        env = name.upper().replace("-", "_")
        self.endpoint = endpoint or os.environ.get(f"PMAS_ENDPOINT_{env}")
        if not self.endpoint:
            raise ProviderError(f"no endpoint for provider {name!r}; set PMAS_ENDPOINT_{env}")
        self.api_key = api_key if api_key is not None else os.environ.get(f"PMAS_API_KEY_{env}")
        self.model = model
        self.options = dict(options or {})
        self.provider_id = f"{name}:{model}"
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def _url(self, path: str) -> str:
        base = self.endpoint.rstrip("/")
        return base if base.endswith(path) else base + path

    def send(self, request: CompletionRequest) -> ProviderReply:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        body: dict[str, Any] = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output,
            **self.options,
        }
        try:
            resp = self._client.post(self._url("/chat/completions"), json=body)
        except httpx.TransportError as exc:
            raise TransportError(f"{self.provider_id}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"{self.provider_id}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"{self.provider_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"].get("content") or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"{self.provider_id}: malformed response body") from exc
        usage = data.get("usage") or {}
        return ProviderReply(text, usage.get("prompt_tokens"), usage.get("completion_tokens"))

    def close(self) -> None:
        self._client.close()
