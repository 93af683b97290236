"""Chat-completion gateway: request/result types, token ledger, retries, repair."""

from __future__ import annotations

import logging
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Protocol

from partnermas.gateway.structured import ParseFailure, Shape, ShapeViolation, extract_structured

log = logging.getLogger(__name__)


class Role(str, Enum):
    PLANNER = "planner"
    SPECIALIST = "specialist"
    SUPERVISOR = "supervisor"
    SINGLE = "single"
    DEBATE_AGENT = "debate-agent"
    DEBATE_SUPERVISOR = "debate-supervisor"
    EMBEDDER = "embedder"


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Transient failure talking to a provider; eligible for retry."""


class ProviderError(GatewayError):
    """Non-transient provider failure (bad request, missing fixture, ...)."""


class ProviderUnavailable(GatewayError):
    def __init__(self, message: str, last_error: Exception | None = None) -> None:
        super().__init__(message)
        self.last_error = last_error


class EmptyCompletion(GatewayError):
    pass


class StructuredOutputError(GatewayError):
    """Parse or shape failure that survived the single repair attempt."""

    def __init__(self, message: str, raw_texts: list[str], cause: Exception) -> None:
        super().__init__(message)
        self.raw_texts = raw_texts
        self.cause = cause

    @property
    def kind(self) -> str:
        return "shape-violation" if isinstance(self.cause, ShapeViolation) else "parse-failure"


@dataclass(frozen=True)
class CompletionRequest:
    role: Role
    system_text: str
    user_text: str
    case_id: str = ""
    agent_name: str = ""
    turn_index: int = 0
    repair: bool = False
    temperature: float = 0.0
    max_output: int = 4096
    structured: bool = True
    # Inputs the prompt was rendered from; only in-process providers read this.
    payload: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @property
    def fixture_key(self) -> tuple[str, str, str, int, bool]:
        return (self.case_id, Role(self.role).value, self.agent_name, self.turn_index, self.repair)


@dataclass(frozen=True)
class ProviderReply:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_tokens: int
    completion_tokens: int
    provider_id: str
    latency: float
    attempt_count: int

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class Provider(Protocol):
    provider_id: str

    def send(self, request: CompletionRequest) -> ProviderReply: ...


def proxy_tokens(text: str) -> int:
    """Deterministic token estimate used when a provider reports no usage."""
    return -(-len(text) // 4)


@dataclass
class LedgerEntry:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    call_count: int = 0
    failed_attempts: int = 0
    providers: set[str] = field(default_factory=set)

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class TokenLedger:
    """Thread-safe token accounting keyed by (case_id, role, agent_name)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str, str], LedgerEntry] = defaultdict(LedgerEntry)

    def record(self, request: CompletionRequest, result: CompletionResult) -> None:
        key = (request.case_id, Role(request.role).value, request.agent_name)
        with self._lock:
            entry = self._entries[key]
            entry.prompt_tokens += result.prompt_tokens
            entry.completion_tokens += result.completion_tokens
            entry.call_count += 1
            entry.providers.add(result.provider_id)

    def record_failure(self, request: CompletionRequest) -> None:
        key = (request.case_id, Role(request.role).value, request.agent_name)
        with self._lock:
            self._entries[key].failed_attempts += 1

    def entries(self) -> dict[tuple[str, str, str], LedgerEntry]:
        with self._lock:
            return {k: self._entries[k] for k in sorted(self._entries)}

    def totals(self, case_id: str | None = None) -> dict[str, int]:
        out = {"prompt_tokens": 0, "completion_tokens": 0, "call_count": 0}
        for (cid, _, _), e in self.entries().items():
            if case_id is not None and cid != case_id:
                continue
            out["prompt_tokens"] += e.prompt_tokens
            out["completion_tokens"] += e.completion_tokens
            out["call_count"] += e.call_count
        out["total_tokens"] = out["prompt_tokens"] + out["completion_tokens"]
        return out

    def by_role(self, case_id: str | None = None) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for (cid, role, _), e in self.entries().items():
            if case_id is not None and cid != case_id:
                continue
            slot = out.setdefault(role, {"prompt_tokens": 0, "completion_tokens": 0, "call_count": 0})
            slot["prompt_tokens"] += e.prompt_tokens
            slot["completion_tokens"] += e.completion_tokens
            slot["call_count"] += e.call_count
        return dict(sorted(out.items()))

    def calls(self, case_id: str, role: Role | str, agent_name: str | None = None) -> int:
        role = Role(role).value
        return sum(
            e.call_count
            for (cid, r, name), e in self.entries().items()
            if cid == case_id and r == role and (agent_name is None or name == agent_name)
        )

    def providers(self) -> set[str]:
        out: set[str] = set()
        for e in self.entries().values():
            out |= e.providers
        return out


REPAIR_SYSTEM = (
    "You repair malformed structured output. Reply with a single valid JSON object and nothing else."
)
REPAIR_USER = (
    "Your previous reply could not be used: {problem}.\n"
    "Return the same content as ONE valid JSON object containing the required top-level keys: {keys}.\n\n"
    "Previous reply:\n{raw}"
)


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.5
    max_delay: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.base_delay * (2 ** (attempt - 1)), self.max_delay)


class Gateway:
    """Routes requests to per-role providers and keeps the token ledger.

    ``providers`` maps a role (or ``"default"``) to a provider instance.
    """

    def __init__(
        self,
        providers: Mapping[str, Provider] | Provider,
        *,
        retry: RetryPolicy | None = None,
        ledger: TokenLedger | None = None,
        max_concurrent: int | None = None,
        min_interval: float = 0.0,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if not isinstance(providers, Mapping):
            providers = {"default": providers}
        self.providers = dict(providers)
        self.retry = retry or RetryPolicy()
        self.ledger = ledger or TokenLedger()
        self._sleep = sleep
        self._limits: dict[int, threading.Semaphore] = {}
        self._max_concurrent = max_concurrent
        self._min_interval = min_interval
        self._last_call: dict[int, float] = {}
        self._rate_lock = threading.Lock()
        self._transcript_lock = threading.Lock()
        self.transcript: list[tuple[tuple[str, str, str, int, bool], CompletionResult]] = []

    def provider_for(self, role: Role | str) -> Provider:
        role = Role(role).value
        try:
            return self.providers[role]
        except KeyError:
            pass
        try:
            return self.providers["default"]
        except KeyError:
            raise ProviderError(f"no provider configured for role {role!r}") from None

    def _semaphore(self, provider: Provider) -> threading.Semaphore | None:
        if self._max_concurrent is None:
            return None
        with self._rate_lock:
            return self._limits.setdefault(id(provider), threading.Semaphore(self._max_concurrent))

    def _throttle(self, provider: Provider) -> None:
        if self._min_interval <= 0:
            return
        with self._rate_lock:
            now = time.monotonic()
            wait = self._last_call.get(id(provider), -1e9) + self._min_interval - now
            self._last_call[id(provider)] = now + max(wait, 0.0)
        if wait > 0:
            self._sleep(wait)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        provider = self.provider_for(request.role)
        sem = self._semaphore(provider)
        last_error: Exception | None = None
        for attempt in range(1, self.retry.max_attempts + 1):
            self._throttle(provider)
            start = time.monotonic()
            try:
                if sem is not None:
                    with sem:
                        reply = provider.send(request)
                else:
                    reply = provider.send(request)
            except TransportError as exc:
                last_error = exc
                self.ledger.record_failure(request)
                log.warning("transport failure from %s (attempt %d): %s", provider.provider_id, attempt, exc)
                if attempt < self.retry.max_attempts:
                    self._sleep(self.retry.delay(attempt))
                continue
            if not reply.text or not reply.text.strip():
                self.ledger.record_failure(request)
                raise EmptyCompletion(f"{provider.provider_id} returned no text for {request.fixture_key}")
            prompt_text = request.system_text + request.user_text
            result = CompletionResult(
                text=reply.text,
                prompt_tokens=reply.prompt_tokens if reply.prompt_tokens is not None else proxy_tokens(prompt_text),
                completion_tokens=(
                    reply.completion_tokens if reply.completion_tokens is not None else proxy_tokens(reply.text)
                ),
                provider_id=provider.provider_id,
                latency=time.monotonic() - start,
                attempt_count=attempt,
            )
            self.ledger.record(request, result)
            with self._transcript_lock:
                self.transcript.append((request.fixture_key, result))
            return result
        raise ProviderUnavailable(
            f"{provider.provider_id} unavailable after {self.retry.max_attempts} attempts", last_error
        )

    def complete_structured(
        self, request: CompletionRequest, shape: Shape
    ) -> tuple[dict[str, Any], list[CompletionResult]]:
        """Complete and parse; one repair round-trip on parse or shape failure."""
        first = self.complete(request)
        try:
            return extract_structured(first.text, shape), [first]
        except (ParseFailure, ShapeViolation) as exc:
            problem = exc
        log.info("repairing structured output for %s: %s", request.fixture_key, problem)
        repair = CompletionRequest(
            role=request.role,
            system_text=REPAIR_SYSTEM,
            user_text=REPAIR_USER.format(
                problem=str(problem), keys=", ".join(shape.required) or "(any)", raw=first.text
            ),
            case_id=request.case_id,
            agent_name=request.agent_name,
            turn_index=request.turn_index,
            repair=True,
            temperature=request.temperature,
            max_output=request.max_output,
            payload=request.payload,
        )
        try:
            second = self.complete(repair)
        except GatewayError as exc:
            raise StructuredOutputError(
                f"repair call for {request.fixture_key} failed: {exc}", [first.text], problem
            ) from exc
        try:
            return extract_structured(second.text, shape), [first, second]
        except (ParseFailure, ShapeViolation) as exc:
            raise StructuredOutputError(
                f"structured output for {request.fixture_key} unusable after repair: {exc}",
                [first.text, second.text],
                exc,
            ) from exc
