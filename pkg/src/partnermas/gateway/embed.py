"""Text embedders: an offline hashed bag-of-words projection and an HTTP client."""

from __future__ import annotations

import hashlib
import os
import re
import time
from typing import Any, Protocol, Sequence

import httpx
import numpy as np

from partnermas.gateway.core import ProviderError, ProviderUnavailable, RetryPolicy, TransportError

_TOKEN = re.compile(r"[a-z0-9]+")


class Embedder(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Signed feature hashing of lowercase word tokens into a fixed dimension.

    Deterministic for a given ``(dimension, seed)``; needs no network.
    """

    def __init__(self, dimension: int = 512, seed: int = 0) -> None:
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)

    def _slot(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
        value = int.from_bytes(digest, "little")
        return value % self.dimension, 1.0 if (value >> 63) & 1 else -1.0

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise ValueError("embed() needs at least one text")
        out = np.zeros((len(texts), self.dimension))
        for i, text in enumerate(texts):
            for token in _TOKEN.findall(text.lower()):
                idx, sign = self._slot(token)
                out[i, idx] += sign
        return out


class HTTPEmbedder:
    """OpenAI-style ``/embeddings`` endpoint with the gateway's retry policy."""

    def __init__(
        self,
        name: str,
        model: str,
        *,
        endpoint: str | None = None,
        api_key: str | None = None,
        retry: RetryPolicy | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Any = None,
    ) -> None:
        env = name.upper().replace("-", "_")
        self.endpoint = endpoint or os.environ.get(f"PMAS_ENDPOINT_{env}")
        if not self.endpoint:
            raise ProviderError(f"no endpoint for embedder {name!r}; set PMAS_ENDPOINT_{env}")
        key = api_key if api_key is not None else os.environ.get(f"PMAS_API_KEY_{env}")
        self.model = model
        self.retry = retry or RetryPolicy()
        self.dimension = 0
        self._sleep = sleep
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=60.0, headers=headers, transport=transport)

    def _post(self, texts: Sequence[str]) -> np.ndarray:
        url = self.endpoint.rstrip("/")
        if not url.endswith("/embeddings"):
            url += "/embeddings"
        try:
            resp = self._client.post(url, json={"model": self.model, "input": list(texts)})
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        rows = sorted(resp.json()["data"], key=lambda d: d["index"])
        return np.asarray([r["embedding"] for r in rows], dtype=float)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise ValueError("embed() needs at least one text")
        sleep = self._sleep or time.sleep
        last: Exception | None = None
        for attempt in range(1, self.retry.max_attempts + 1):
            try:
                vectors = self._post(texts)
            except TransportError as exc:
                last = exc
                if attempt < self.retry.max_attempts:
                    sleep(self.retry.delay(attempt))
                continue
            self.dimension = vectors.shape[1]
            return vectors
        raise ProviderUnavailable(f"embedder {self.model} unavailable", last)


def embed(texts: Sequence[str], embedder: Embedder | None = None) -> np.ndarray:
    """Embed ``texts`` in order; falls back to the offline hashing embedder."""
    return (embedder or HashingEmbedder()).embed(list(texts))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))
