"""Typed values for candidate pools, shortlists and the shortlist-size rules.

Everything here is immutable once constructed so that pools and shortlists
can be shared freely between concurrently evaluated cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence


class InvalidPoolError(ValueError):
    """Raised when a pool is too small or internally inconsistent."""


class FeatureKind(str, Enum):
    NUMERIC = "numeric"
    TEXT = "text"
    CATEGORICAL = "categorical"
    IDENTIFIER = "identifier"


MISSING_TOKEN = "N/A"


@dataclass(frozen=True)
class FeatureValue:
    """A single cell of the candidate matrix.

    ``value`` is ``None`` for missing cells, a finite float for numeric cells
    and a string otherwise. Missing is distinct from the empty string.
    """

    kind: FeatureKind
    value: float | str | None

    def __post_init__(self) -> None:
        if self.value is None:
            return
        if self.kind is FeatureKind.NUMERIC:
            if isinstance(self.value, bool) or not isinstance(self.value, (int, float)):
                raise TypeError(f"numeric feature needs a number, got {self.value!r}")
            if not math.isfinite(self.value):
                raise ValueError(f"numeric feature must be finite, got {self.value!r}")
            object.__setattr__(self, "value", float(self.value))
        elif not isinstance(self.value, str):
            raise TypeError(f"{self.kind.value} feature needs a string, got {self.value!r}")

    @classmethod
    def numeric(cls, value: float) -> FeatureValue:
        return cls(FeatureKind.NUMERIC, value)

    @classmethod
    def text(cls, value: str) -> FeatureValue:
        return cls(FeatureKind.TEXT, value)

    @classmethod
    def categorical(cls, value: str) -> FeatureValue:
        return cls(FeatureKind.CATEGORICAL, value)

    @classmethod
    def identifier(cls, value: str) -> FeatureValue:
        return cls(FeatureKind.IDENTIFIER, value)

    @classmethod
    def missing(cls, kind: FeatureKind = FeatureKind.TEXT) -> FeatureValue:
        return cls(kind, None)

    @property
    def is_missing(self) -> bool:
        return self.value is None


def _frozen_map(items: Mapping[str, FeatureValue] | Iterable[tuple[str, FeatureValue]]) -> Mapping[str, FeatureValue]:
    return MappingProxyType(dict(items))


@dataclass(frozen=True)
class CandidateRecord:
    firm_id: str
    features: Mapping[str, FeatureValue]
    is_ground_truth: bool = False

    def __post_init__(self) -> None:
        if not self.firm_id:
            raise InvalidPoolError("candidate firm_id must be non-empty")
        object.__setattr__(self, "features", _frozen_map(self.features))

    def get(self, name: str) -> FeatureValue | None:
        return self.features.get(name)


@dataclass(frozen=True)
class TaskContext:
    company_id: str
    lead_profile: Mapping[str, FeatureValue]
    target_profile: Mapping[str, FeatureValue]
    period_label: str = ""

    def __post_init__(self) -> None:
        if not self.company_id:
            raise InvalidPoolError("task context needs a company_id")
        object.__setattr__(self, "lead_profile", _frozen_map(self.lead_profile))
        object.__setattr__(self, "target_profile", _frozen_map(self.target_profile))
        for label, profile in (("lead", self.lead_profile), ("target", self.target_profile)):
            if not any(not v.is_missing for v in profile.values()):
                raise InvalidPoolError(
                    f"case {self.company_id}: {label} profile has no non-missing field"
                )


@dataclass(frozen=True)
class CasePool:
    """One benchmark case: context, candidate rows and ground-truth syndicate."""

    context: TaskContext
    candidates: tuple[CandidateRecord, ...]
    feature_schema: tuple[tuple[str, FeatureKind], ...]
    declared_real_size: int | None = None
    ground_truth: frozenset[str] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(
            self, "feature_schema", tuple((n, FeatureKind(k)) for n, k in self.feature_schema)
        )
        case = self.context.company_id
        if len(self.candidates) < 3:
            raise InvalidPoolError(f"case {case}: pool has {len(self.candidates)} candidates, need >= 3")
        seen: set[str] = set()
        names = {n for n, _ in self.feature_schema}
        for cand in self.candidates:
            if cand.firm_id in seen:
                raise InvalidPoolError(f"case {case}: duplicate firm_id {cand.firm_id}")
            seen.add(cand.firm_id)
            extra = set(cand.features) - names
            if extra:
                raise InvalidPoolError(
                    f"case {case}: firm {cand.firm_id} has undeclared features {sorted(extra)}"
                )
        truth = frozenset(c.firm_id for c in self.candidates if c.is_ground_truth)
        object.__setattr__(self, "ground_truth", truth)
        if self.declared_real_size is not None and self.declared_real_size != len(truth):
            raise InvalidPoolError(
                f"case {case}: realsize={self.declared_real_size} but {len(truth)} rows have real=1"
            )

    @property
    def case_id(self) -> str:
        return self.context.company_id

    @property
    def m(self) -> int:
        return len(self.candidates)

    @property
    def firm_ids(self) -> tuple[str, ...]:
        return tuple(c.firm_id for c in self.candidates)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.feature_schema)

    def candidate(self, firm_id: str) -> CandidateRecord:
        for c in self.candidates:
            if c.firm_id == firm_id:
                return c
        raise KeyError(firm_id)


def final_shortlist_size(m: int) -> int:
    """Size of the final shortlist: one third of the pool, rounded down."""
    if m < 3:
        raise InvalidPoolError(f"pool of {m} candidates has no valid shortlist size")
    return m // 3


def specialist_shortlist_size(m: int) -> int:
    """Size of each specialist's shortlist: one third of the pool, rounded up."""
    if m < 3:
        raise InvalidPoolError(f"pool of {m} candidates has no valid shortlist size")
    return -(-m // 3)


class ScoreScale(str, Enum):
    ONE_TO_TEN = "one-to-ten"
    ONE_TO_FIVE = "one-to-five"

    @property
    def bounds(self) -> tuple[float, float]:
        return (1.0, 10.0) if self is ScoreScale.ONE_TO_TEN else (1.0, 5.0)

    def contains(self, score: float) -> bool:
        lo, hi = self.bounds
        return lo <= score <= hi

    def clamp(self, score: float) -> float:
        lo, hi = self.bounds
        return min(max(score, lo), hi)


@dataclass(frozen=True)
class ShortlistEntry:
    firm_id: str
    rank: int
    score: float

    def to_dict(self) -> dict[str, Any]:
        return {"firm_id": self.firm_id, "rank": self.rank, "score": self.score}


@dataclass(frozen=True)
class RankedShortlist:
    """An ordered shortlist. Construction enforces ranks 1..n and unique firms."""

    producer: str
    entries: tuple[ShortlistEntry, ...]
    scale: ScoreScale = ScoreScale.ONE_TO_TEN

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "scale", ScoreScale(self.scale))
        ids = [e.firm_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{self.producer}: duplicate firm ids in shortlist")
        if [e.rank for e in entries] != list(range(1, len(entries) + 1)):
            raise ValueError(f"{self.producer}: ranks must be exactly 1..{len(entries)} in order")

    @classmethod
    def from_ranked(
        cls,
        producer: str,
        items: Sequence[tuple[str, float]],
        scale: ScoreScale = ScoreScale.ONE_TO_TEN,
    ) -> RankedShortlist:
        """Build from ``(firm_id, score)`` pairs already in rank order."""
        return cls(
            producer,
            tuple(ShortlistEntry(fid, i, float(s)) for i, (fid, s) in enumerate(items, start=1)),
            scale,
        )

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def firm_ids(self) -> tuple[str, ...]:
        return tuple(e.firm_id for e in self.entries)

    def rank_of(self, firm_id: str) -> int | None:
        for e in self.entries:
            if e.firm_id == firm_id:
                return e.rank
        return None

    def score_of(self, firm_id: str) -> float | None:
        for e in self.entries:
            if e.firm_id == firm_id:
                return e.score
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "producer": self.producer,
            "scale": self.scale.value,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RankedShortlist:
        return cls(
            data["producer"],
            tuple(ShortlistEntry(e["firm_id"], int(e["rank"]), float(e["score"])) for e in data["entries"]),
            ScoreScale(data.get("scale", ScoreScale.ONE_TO_TEN.value)),
        )


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}


def validate_shortlist(shortlist: Any, pool: CasePool, expected_len: int) -> ValidationResult:
    """Check a shortlist against its pool without raising.

    Accepts a ``RankedShortlist`` or any object exposing ``entries`` (and
    optionally ``scale``) so that raw, possibly malformed lists can be
    audited before they are turned into a ``RankedShortlist``.
    """
    entries = list(shortlist.entries)
    scale = ScoreScale(getattr(shortlist, "scale", ScoreScale.ONE_TO_TEN))
    known = set(pool.firm_ids)
    out: list[Violation] = []

    if len(entries) != expected_len:
        out.append(Violation("wrong-length", f"expected {expected_len} entries, got {len(entries)}"))
    seen: set[str] = set()
    for e in entries:
        if e.firm_id not in known:
            out.append(Violation("unknown-firm", e.firm_id))
        if e.firm_id in seen:
            out.append(Violation("duplicate-firm", e.firm_id))
        seen.add(e.firm_id)
        if not scale.contains(e.score):
            out.append(Violation("score-out-of-range", f"{e.firm_id}: {e.score}"))
    ranks = [e.rank for e in entries]
    if len(set(ranks)) != len(ranks):
        out.append(Violation("duplicate-rank", str(ranks)))
    if sorted(set(ranks)) != list(range(1, len(set(ranks)) + 1)) or len(ranks) != len(set(ranks)):
        out.append(Violation("rank-gap", str(ranks)))
    elif ranks != sorted(ranks):
        out.append(Violation("rank-order", str(ranks)))
    return ValidationResult(tuple(out))


@dataclass(frozen=True)
class AgentBlueprint:
    """A specialist configuration emitted by the planner."""

    name: str
    role: str
    ability: str
    profile: str

    def __post_init__(self) -> None:
        for attr in ("name", "role", "ability", "profile"):
            value = getattr(self, attr)
            if not isinstance(value, str) or not value.strip():
                raise ValueError(f"blueprint field {attr!r} must be a non-empty string")

    @property
    def profile_text(self) -> str:
        return f"{self.name}. {self.role}. {self.ability}. {self.profile}"

    def to_dict(self) -> dict[str, str]:
        return {"name": self.name, "role": self.role, "ability": self.ability, "profile": self.profile}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AgentBlueprint:
        return cls(data["name"], data["role"], data["ability"], data["profile"])
