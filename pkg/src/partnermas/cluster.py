"""Group specialist blueprints into role families and measure team diversity."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from partnermas.gateway import Embedder, HashingEmbedder

log = logging.getLogger(__name__)

AgentKey = tuple[str, str, str]  # (run, case_id, agent name)


@dataclass(frozen=True)
class ProfileVector:
    key: AgentKey
    vector: np.ndarray
    text: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError(f"profile vector for {self.key} must be a finite 1-d array")
        object.__setattr__(self, "vector", v)


def blueprint_text(bp: Mapping[str, Any]) -> str:
    return " ".join(str(bp.get(f, "")) for f in ("name", "role", "ability", "profile")).strip()


def profile_vectors(
    records: Iterable[Mapping[str, Any]],
    embedder: Embedder | None = None,
    run: str = "run",
) -> list[ProfileVector]:
    """One vector per planner-generated blueprint found in run-log records."""
    keys: list[AgentKey] = []
    texts: list[str] = []
    for rec in records:
        planner = (rec.get("record") or {}).get("planner") or {}
        for bp in planner.get("blueprints", []):
            keys.append((run, rec["case_id"], bp["name"]))
            texts.append(blueprint_text(bp))
    if not texts:
        return []
    matrix = (embedder or HashingEmbedder()).embed(texts)
    return [ProfileVector(k, row, t) for k, row, t in zip(keys, matrix, texts)]


def _unit(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeding with probability proportional to squared distance from the chosen centres."""
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # Every point coincides with a centre already; any pick is as good as another.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def silhouette(x: np.ndarray, labels: Sequence[int] | np.ndarray) -> float | None:
    """Mean silhouette coefficient (Euclidean). None when fewer than 2 or more than n-1 clusters."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    n = len(x)
    if not 2 <= len(uniq) <= n - 1:
        return None
    d = np.sqrt(np.maximum(_sq_dists(x, x), 0.0))
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        size = own.sum()
        if size == 1:
            continue
        a = d[i, own].sum() / (size - 1)
        b = min(d[i, labels == c].mean() for c in uniq if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: dict[AgentKey, int]
    silhouette: float
    degenerate: bool = False
    iterations: int = 0
    reseeded: int = 0
    labels: dict[int, str] = field(default_factory=dict)

    def counts(self, keys: Iterable[AgentKey] | None = None) -> Counter:
        keys = self.assignments if keys is None else keys
        return Counter(self.assignments[k] for k in keys if k in self.assignments)

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "silhouette": self.silhouette,
            "degenerate": self.degenerate,
            "iterations": self.iterations,
            "reseeded": self.reseeded,
            "labels": {str(c): lbl for c, lbl in sorted(self.labels.items())},
            "centroids": self.centroids.tolist(),
            "assignments": [
                {"run": r, "case_id": c, "agent": a, "cluster": idx}
                for (r, c, a), idx in sorted(self.assignments.items())
            ],
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def cluster_profiles(
    vectors: Sequence[ProfileVector],
    k: int = 8,
    seed: int = 0,
    *,
    max_iter: int = 300,
) -> ClusterModel:
    """k-means (Lloyd) on unit-normalized vectors with k-means++ seeding.

    Rows are put into a canonical (lexicographic) order first, so the
    result, cluster indices included, does not depend on input order.
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if len(vectors) < k:
        raise ValueError(f"need at least k={k} vectors, got {len(vectors)}")
    dims = {v.vector.shape[0] for v in vectors}
    if len(dims) != 1:
        raise ValueError(f"profile vectors have mixed dimensions {sorted(dims)}")

    raw = _unit(np.vstack([v.vector for v in vectors]))
    order = np.lexsort(raw.T[::-1])
    x = raw[order]
    keys = [vectors[i].key for i in order]

    rng = np.random.default_rng(seed)
    centroids = kmeans_pp_init(x, k, rng)
    labels = np.full(len(x), -1)
    reseeded = 0
    degenerate = False
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centroids)
        new = d2.argmin(axis=1)
        for c in range(k):
            if np.any(new == c):
                continue
            # Empty cluster: move its centre onto the point farthest from its own centre.
            far = d2[np.arange(len(x)), new]
            j = int(far.argmax())
            if far[j] <= 0:
                degenerate = True
                continue
            log.info("k-means: cluster %d empty at iteration %d; re-seeded", c, it)
            reseeded += 1
            centroids[c] = x[j]
            new[j] = c
            d2[j] = _sq_dists(x[j : j + 1], centroids)[0]
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = x[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)

    # Canonical cluster indices: numbered by first appearance in the sorted rows.
    remap: dict[int, int] = {}
    for lbl in labels:
        remap.setdefault(int(lbl), len(remap))
    for c in range(k):
        remap.setdefault(c, len(remap))
    labels = np.array([remap[int(lbl)] for lbl in labels])
    centroids = centroids[[c for c, _ in sorted(remap.items(), key=lambda p: p[1])]]

    sil = silhouette(x, labels)
    if sil is None:
        degenerate = True
        sil = 0.0
    return ClusterModel(
        k, centroids, {key: int(lbl) for key, lbl in zip(keys, labels)}, sil, degenerate, it, reseeded
    )


def sweep_k(vectors: Sequence[ProfileVector], ks: Iterable[int], seed: int = 0) -> dict[int, float]:
    """Silhouette for each candidate k (skipping values the data cannot support)."""
    out = {}
    for k in ks:
        if 2 <= k <= len(vectors):
            out[k] = cluster_profiles(vectors, k, seed).silhouette
    return out


def hhi(counts: Mapping[Any, int] | Sequence[int]) -> float:
    values = [c for c in (counts.values() if isinstance(counts, Mapping) else counts) if c > 0]
    total = sum(values)
    if total < 1:
        raise ValueError("HHI needs a positive total count")
    return math.fsum((c / total) ** 2 for c in values)


def normalized_hhi(counts: Mapping[Any, int] | Sequence[int]) -> float:
    """(HHI - 1/K) / (1 - 1/K) over the K clusters with a nonzero count; 1.0 when K = 1."""
    values = [c for c in (counts.values() if isinstance(counts, Mapping) else counts) if c > 0]
    h = hhi(values)
    big_k = len(values)
    if big_k == 1:
        return 1.0
    return min(1.0, max(0.0, (h - 1 / big_k) / (1 - 1 / big_k)))


def diversity_report(
    records: Iterable[Mapping[str, Any]],
    model: ClusterModel,
    run: str = "run",
) -> list[dict[str, Any]]:
    """Per case: specialist count, active clusters, HHI, normalized HHI and match rate."""
    rows = []
    for rec in records:
        case = rec["case_id"]
        planner = (rec.get("record") or {}).get("planner") or {}
        keys = [(run, case, bp["name"]) for bp in planner.get("blueprints", [])]
        if not keys:
            continue  # baseline runs have no planner-designed specialists
        counts = model.counts(keys)
        if not counts:
            log.warning("case %s has no agents in the cluster model; skipped", case)
            continue
        rows.append(
            {
                "case_id": case,
                "specialists": sum(counts.values()),
                "clusters": len(counts),
                "hhi": hhi(counts),
                "normalized_hhi": normalized_hhi(counts),
                "match_rate": (rec.get("result") or {}).get("match_rate"),
            }
        )
    return rows
