"""Uniform chat-completion and embedding access with token accounting."""

from partnermas.gateway.core import (
    CompletionRequest,
    CompletionResult,
    EmptyCompletion,
    Gateway,
    GatewayError,
    ProviderError,
    ProviderReply,
    ProviderUnavailable,
    RetryPolicy,
    Role,
    StructuredOutputError,
    TokenLedger,
    TransportError,
    proxy_tokens,
)
from partnermas.gateway.embed import Embedder, HashingEmbedder, HTTPEmbedder, cosine, embed
from partnermas.gateway.providers import (
    CallableProvider,
    HTTPChatProvider,
    RecordingProvider,
    ScriptedProvider,
    dump_fixtures,
)
from partnermas.gateway.structured import (
    FREE_TEXT,
    ParseFailure,
    Shape,
    ShapeViolation,
    extract_structured,
    find_json_object,
)

__all__ = [
    "CallableProvider",
    "CompletionRequest",
    "CompletionResult",
    "EmptyCompletion",
    "FREE_TEXT",
    "Gateway",
    "GatewayError",
    "HTTPChatProvider",
    "Embedder",
    "HTTPEmbedder",
    "HashingEmbedder",
    "ParseFailure",
    "ProviderError",
    "ProviderReply",
    "ProviderUnavailable",
    "RecordingProvider",
    "RetryPolicy",
    "Role",
    "ScriptedProvider",
    "Shape",
    "ShapeViolation",
    "StructuredOutputError",
    "TokenLedger",
    "TransportError",
    "cosine",
    "dump_fixtures",
    "embed",
    "extract_structured",
    "find_json_object",
    "proxy_tokens",
]
