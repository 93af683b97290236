"""Specialist agent: one role-conditioned ranking of the candidate pool."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from partnermas.domain import (
    AgentBlueprint,
    CasePool,
    RankedShortlist,
    ScoreScale,
    ShortlistEntry,
    TaskContext,
    specialist_shortlist_size,
)
from partnermas.gateway import CompletionRequest, Gateway, GatewayError, Role, StructuredOutputError
from partnermas.prompts import PromptVariant, TemplateSet, render_specialist_prompt

log = logging.getLogger(__name__)


class SpecialistFailure(RuntimeError):
    def __init__(self, agent: str, reason: str, raw_texts: Sequence[str] = ()) -> None:
        super().__init__(f"specialist {agent!r} failed: {reason}")
        self.agent = agent
        self.reason = reason
        self.raw_texts = list(raw_texts)


@dataclass(frozen=True)
class RawEntry:
    firm_id: str
    rank: int | None
    score: float | None
    rationale: str = ""


@dataclass(frozen=True)
class SpecialistReport:
    blueprint: AgentBlueprint
    evaluation_focus: str
    overall_rationale: str
    shortlist: RankedShortlist
    per_entry_rationales: Mapping[str, str]
    k_prime: int
    normalized: bool = False
    short: bool = False
    violations: tuple[str, ...] = field(default=(), compare=False)
    focus_features: tuple[str, ...] = ()
    raw_text: str = field(default="", compare=False)

    @property
    def name(self) -> str:
        return self.blueprint.name

    def to_dict(self) -> dict[str, Any]:
        return {
            "agent": self.blueprint.to_dict(),
            "evaluation_focus": self.evaluation_focus,
            "focus_features": list(self.focus_features),
            "overall_rationale": self.overall_rationale,
            "shortlist": self.shortlist.to_dict(),
            "rationales": dict(self.per_entry_rationales),
            "k_prime": self.k_prime,
            "normalized": self.normalized,
            "short": self.short,
            "violations": list(self.violations),
            "raw_text": self.raw_text,
        }


def _as_float(value: Any) -> float | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = re.search(r"-?\d+(?:\.\d+)?", value)
        return float(m.group(0)) if m else None
    return None


def _first(item: Mapping[str, Any], keys: Sequence[str]) -> Any:
    return next((item[k] for k in keys if item.get(k) is not None), None)


def parse_ranked_candidates(items: Any) -> list[RawEntry]:
    if not isinstance(items, list):
        return []
    out: list[RawEntry] = []
    for item in items:
        if isinstance(item, str):
            out.append(RawEntry(item.strip(), None, None))
            continue
        if not isinstance(item, dict):
            continue
        firm = _first(item, ("firm_id", "id", "vcfirmid"))
        if firm is None:
            continue
        rank = _as_float(item.get("rank"))
        out.append(
            RawEntry(
                str(firm).strip(),
                int(rank) if rank is not None else None,
                _as_float(_first(item, ("score", "alignment_score"))),
                str(item.get("rationale", "")),
            )
        )
    return out


def normalize_entries(
    raw: Sequence[RawEntry],
    known_firms: set[str] | frozenset[str],
    k_prime: int,
    scale: ScoreScale = ScoreScale.ONE_TO_TEN,
) -> tuple[list[ShortlistEntry], dict[str, str], list[str]]:
    """Drop unknown firms, collapse duplicates to their best rank, clamp scores,
    truncate to ``k_prime`` and renumber ranks from 1.

    Entries are ordered by their stated rank (list position breaks ties and
    stands in for a missing rank). Returns entries, rationales and the list
    of violations observed.
    """
    violations: list[str] = []
    ordered = sorted(
        enumerate(raw), key=lambda p: (p[1].rank if p[1].rank is not None else p[0] + 1, p[0])
    )
    kept: list[RawEntry] = []
    seen: set[str] = set()
    for _, e in ordered:
        if e.firm_id not in known_firms:
            violations.append(f"unknown-firm:{e.firm_id}")
            continue
        if e.firm_id in seen:
            violations.append(f"duplicate-firm:{e.firm_id}")
            continue
        seen.add(e.firm_id)
        kept.append(e)
    if len(kept) > k_prime:
        violations.append(f"truncated:{len(kept)}->{k_prime}")
        kept = kept[:k_prime]

    lo, _ = scale.bounds
    entries: list[ShortlistEntry] = []
    rationales: dict[str, str] = {}
    for i, e in enumerate(kept, start=1):
        score = e.score
        if score is None:
            violations.append(f"missing-score:{e.firm_id}")
            score = lo
        elif not scale.contains(score):
            violations.append(f"score-out-of-range:{e.firm_id}={score:g}")
            score = scale.clamp(score)
        if e.rank != i:
            violations.append(f"renumbered:{e.firm_id}")
        entries.append(ShortlistEntry(e.firm_id, i, score))
        rationales[e.firm_id] = e.rationale
    return entries, rationales, violations


def match_focus_features(focus: str, feature_names: Sequence[str]) -> tuple[str, ...]:
    """Schema features named in a free-text focus statement (exact or substring, case-insensitive)."""
    text = focus.lower()
    squashed = re.sub(r"[^a-z0-9]", "", text)
    hits = []
    for name in feature_names:
        low = name.lower()
        if low in text or low.replace("_", " ") in text or low.replace("_", "") in squashed:
            hits.append(name)
    return tuple(hits)


def build_report(
    blueprint: AgentBlueprint,
    obj: Mapping[str, Any],
    pool: CasePool,
    k_prime: int,
    raw_text: str = "",
) -> SpecialistReport:
    raw = parse_ranked_candidates(obj.get("ranked_candidates"))
    entries, rationales, violations = normalize_entries(raw, set(pool.firm_ids), k_prime)
    for v in violations:
        log.info("case %s specialist %s: %s", pool.case_id, blueprint.name, v)
    focus = obj.get("evaluation_focus", "")
    focus = ", ".join(map(str, focus)) if isinstance(focus, list) else str(focus)
    return SpecialistReport(
        blueprint=blueprint,
        evaluation_focus=focus,
        overall_rationale=str(obj.get("overall_rationale", "")),
        shortlist=RankedShortlist(blueprint.name, tuple(entries), ScoreScale.ONE_TO_TEN),
        per_entry_rationales=rationales,
        k_prime=k_prime,
        normalized=bool(violations),
        short=len(entries) < k_prime,
        violations=tuple(violations),
        focus_features=match_focus_features(focus, pool.feature_names),
        raw_text=raw_text,
    )


def renormalize(report: SpecialistReport, pool: CasePool) -> SpecialistReport:
    """Run an existing report back through normalization (idempotent on normalized reports)."""
    raw = [
        RawEntry(e.firm_id, e.rank, e.score, report.per_entry_rationales.get(e.firm_id, ""))
        for e in report.shortlist.entries
    ]
    entries, rationales, violations = normalize_entries(raw, set(pool.firm_ids), report.k_prime)
    return SpecialistReport(
        report.blueprint,
        report.evaluation_focus,
        report.overall_rationale,
        RankedShortlist(report.blueprint.name, tuple(entries), ScoreScale.ONE_TO_TEN),
        rationales,
        report.k_prime,
        report.normalized or bool(violations),
        len(entries) < report.k_prime,
        report.violations + tuple(violations),
        report.focus_features,
        report.raw_text,
    )


def evaluate(
    blueprint: AgentBlueprint,
    ctx: TaskContext,
    pool: CasePool,
    variant: PromptVariant,
    gateway: Gateway,
    *,
    templates: TemplateSet | None = None,
    temperature: float = 0.0,
) -> SpecialistReport:
    # Specialist prompts carry no business hint; variant only travels in the payload.
    k_prime = specialist_shortlist_size(pool.m)
    prompt = render_specialist_prompt(blueprint, ctx, pool, k_prime, templates)
    request = CompletionRequest(
        Role.SPECIALIST,
        prompt.system_text,
        prompt.user_text,
        case_id=ctx.company_id,
        agent_name=blueprint.name,
        temperature=temperature,
        payload={"pool": pool, "blueprint": blueprint, "k_prime": k_prime, "variant": PromptVariant(variant)},
    )
    try:
        obj, results = gateway.complete_structured(request, prompt.declared_shape)
    except StructuredOutputError as exc:
        raise SpecialistFailure(blueprint.name, exc.kind, exc.raw_texts) from exc
    except GatewayError as exc:
        raise SpecialistFailure(blueprint.name, f"{type(exc).__name__}: {exc}") from exc
    return build_report(blueprint, obj, pool, k_prime, results[-1].text)


@dataclass
class SpecialistRound:
    reports: list[SpecialistReport]
    failures: list[SpecialistFailure]


def evaluate_all(
    blueprints: Sequence[AgentBlueprint],
    ctx: TaskContext,
    pool: CasePool,
    variant: PromptVariant,
    gateway: Gateway,
    *,
    max_workers: int | None = None,
    templates: TemplateSet | None = None,
    temperature: float = 0.0,
) -> SpecialistRound:
    """Run every specialist concurrently; results come back in blueprint order."""

    def one(bp: AgentBlueprint) -> SpecialistReport | SpecialistFailure:
        try:
            return evaluate(bp, ctx, pool, variant, gateway, templates=templates, temperature=temperature)
        except SpecialistFailure as exc:
            log.warning("case %s: %s", pool.case_id, exc)
            return exc

    workers = max_workers or max(1, len(blueprints))
    with ThreadPoolExecutor(max_workers=workers) as ex:
        outcomes = list(ex.map(one, blueprints))
    return SpecialistRound(
        [o for o in outcomes if isinstance(o, SpecialistReport)],
        [o for o in outcomes if isinstance(o, SpecialistFailure)],
    )
