"""Supervisor: merge specialist shortlists into the final top-k list.

Two signals drive the merge. ``support_count`` (F1) counts the specialist
lists that contain a firm; ``f2_score`` sums ``w_i / rank_i`` over the lists
that contain it. Firms backed by a strict majority of specialists are taken
first, remaining slots go to the best F2 scores.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Sequence

from partnermas.domain import CasePool, RankedShortlist, ScoreScale, ShortlistEntry
from partnermas.gateway import CompletionRequest, Gateway, GatewayError, Role
from partnermas.prompts import PromptVariant, SupervisorMode, TemplateSet, render_supervisor_prompt
from partnermas.specialist import SpecialistReport, parse_ranked_candidates

log = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-6
# F2 is compared at this many decimals, so sums that are equal in exact
# arithmetic still tie after float rounding of renormalized weights.
F2_DECIMALS = 9


class AggregationMode(str, Enum):
    DETERMINISTIC = "deterministic"
    IMPORTANCE = "importance"
    WEIGHT = "weight"
    MAJORITY = "majority"


@dataclass(frozen=True)
class ImportanceWeights:
    weights: Mapping[str, float]
    source: str = "uniform"

    def __post_init__(self) -> None:
        w = dict(self.weights)
        if not w:
            raise ValueError("importance weights need at least one agent")
        if any(not math.isfinite(v) or v < 0 for v in w.values()):
            raise ValueError(f"weights must be finite and non-negative: {w}")
        if abs(math.fsum(w.values()) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"weights must sum to 1, got {math.fsum(w.values())!r}")
        object.__setattr__(self, "weights", dict(sorted(w.items())))

    @classmethod
    def uniform(cls, names: Sequence[str]) -> ImportanceWeights:
        names = list(dict.fromkeys(names))
        return cls({n: 1.0 / len(names) for n in names}, "uniform")

    @classmethod
    def normalize(
        cls, raw: Mapping[str, Any], names: Sequence[str], source: str = "configured"
    ) -> tuple[ImportanceWeights, list[str]]:
        """Coerce arbitrary model-supplied weights onto ``names``.

        Unknown agents are dropped, missing or unusable values count as 0 and
        the rest is rescaled to sum to 1. An all-zero vector becomes uniform.
        Returns the weights plus a list of notes describing any repair.
        """
        notes: list[str] = []
        known = list(dict.fromkeys(names))
        for extra in sorted(set(raw) - set(known)):
            notes.append(f"dropped weight for unknown agent {extra!r}")
        values: dict[str, float] = {}
        for n in known:
            v = raw.get(n)
            try:
                v = float(v)  # type: ignore[arg-type]
            except (TypeError, ValueError):
                notes.append(f"no usable weight for {n!r}; using 0")
                v = 0.0
            if not math.isfinite(v) or v < 0:
                notes.append(f"weight for {n!r} is {v!r}; using 0")
                v = 0.0
            values[n] = v
        total = math.fsum(values.values())
        if total <= 0:
            notes.append("all weights zero; falling back to uniform")
            return cls.uniform(known), notes
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            notes.append(f"weights summed to {total:.6g}; renormalized")
        return cls({n: v / total for n, v in values.items()}, source), notes

    @classmethod
    def from_ranking(cls, ranking: Sequence[str], names: Sequence[str]) -> tuple[ImportanceWeights, list[str]]:
        """Reciprocal-position weights from an ordered importance ranking."""
        order = [n for n in dict.fromkeys(ranking) if n in set(names)]
        notes = [f"importance ranking omits {n!r}" for n in names if n not in order]
        raw = {n: 1.0 / pos for pos, n in enumerate(order, start=1)}
        w, more = cls.normalize(raw, names, "llm-assigned")
        return w, notes + [m for m in more if not m.startswith("no usable")]


def support_count(lists: Sequence[RankedShortlist], firm: str) -> int:
    return sum(1 for s in lists if firm in s.firm_ids)


def f2_score(lists: Sequence[RankedShortlist], w: ImportanceWeights | Mapping[str, float], firm: str) -> float:
    """Weighted reciprocal-rank score; a list that omits ``firm`` contributes 0."""
    weights = w.weights if isinstance(w, ImportanceWeights) else w
    terms = []
    for s in lists:
        r = s.rank_of(firm)
        if r is not None:
            terms.append(weights.get(s.producer, 0.0) / r)
    return math.fsum(terms)


def mean_score(lists: Sequence[RankedShortlist], firm: str) -> float:
    scores = [sc for s in lists if (sc := s.score_of(firm)) is not None]
    return math.fsum(scores) / len(scores) if scores else 0.0


@dataclass(frozen=True)
class AggregationTrace:
    support_counts: Mapping[str, int]
    f2_scores: Mapping[str, float]
    consensus_picks: tuple[str, ...]
    conflict_picks: tuple[str, ...]
    final: RankedShortlist
    mode: AggregationMode
    weights: ImportanceWeights
    flags: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()
    audit_final: tuple[str, ...] = ()
    raw_texts: tuple[str, ...] = field(default=(), compare=False)

    @property
    def undersubscribed(self) -> bool:
        return "undersubscribed" in self.flags

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "weights": {"source": self.weights.source, "values": dict(self.weights.weights)},
            "support_counts": dict(sorted(self.support_counts.items())),
            "f2_scores": dict(sorted(self.f2_scores.items())),
            "consensus_picks": list(self.consensus_picks),
            "conflict_picks": list(self.conflict_picks),
            "final": self.final.to_dict(),
            "flags": list(self.flags),
            "notes": list(self.notes),
            "audit_final": list(self.audit_final),
            "raw_texts": list(self.raw_texts),
        }


def _majority(support: int, n_lists: int, threshold: float) -> bool:
    return support > threshold * n_lists


def aggregate_deterministic(
    lists: Sequence[RankedShortlist],
    w: ImportanceWeights | None,
    k: int,
    *,
    threshold: float = 0.5,
    producer: str = "supervisor",
) -> AggregationTrace:
    """Consensus first (support > ``threshold``·N), then fill by F2.

    Both stages break ties by mean alignment score, then firm id.
    """
    lists = [s for s in lists if len(s)]
    if not lists:
        raise ValueError("aggregation needs at least one non-empty shortlist")
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    w = w or ImportanceWeights.uniform([s.producer for s in lists])
    firms = sorted({f for s in lists for f in s.firm_ids})
    support = {f: support_count(lists, f) for f in firms}
    f2 = {f: f2_score(lists, w, f) for f in firms}
    means = {f: mean_score(lists, f) for f in firms}

    majority = [f for f in firms if _majority(support[f], len(lists), threshold)]
    majority.sort(key=lambda f: (-support[f], -means[f], f))
    consensus = majority[:k]
    taken = set(consensus)
    rest = sorted((f for f in firms if f not in taken), key=lambda f: (-round(f2[f], F2_DECIMALS), -means[f], f))
    conflict = rest[: k - len(consensus)]

    flags = []
    if len(consensus) + len(conflict) < k:
        flags.append("undersubscribed")
    final = _shortlist(producer, [*consensus, *conflict], means)
    return AggregationTrace(
        support, f2, tuple(consensus), tuple(conflict), final, AggregationMode.DETERMINISTIC, w, tuple(flags)
    )


def _shortlist(producer: str, order: Sequence[str], means: Mapping[str, float]) -> RankedShortlist:
    lo, _ = ScoreScale.ONE_TO_TEN.bounds
    return RankedShortlist(
        producer,
        tuple(
            ShortlistEntry(f, i, ScoreScale.ONE_TO_TEN.clamp(means.get(f) or lo))
            for i, f in enumerate(order, start=1)
        ),
        ScoreScale.ONE_TO_TEN,
    )


def _request(
    prompt: Any, case_id: str, agent: str, turn: int, payload: Mapping[str, Any], temperature: float
) -> CompletionRequest:
    return CompletionRequest(
        Role.SUPERVISOR,
        prompt.system_text,
        prompt.user_text,
        case_id=case_id,
        agent_name=agent,
        turn_index=turn,
        temperature=temperature,
        payload=dict(payload),
    )


def extract_final_order(obj: Mapping[str, Any], pool: CasePool, k: int, key: str = "final_shortlist") -> tuple[list[str], list[str]]:
    raw = parse_ranked_candidates(obj.get(key))
    ordered = sorted(enumerate(raw), key=lambda p: (p[1].rank if p[1].rank is not None else p[0] + 1, p[0]))
    known = set(pool.firm_ids)
    out: list[str] = []
    notes: list[str] = []
    for _, e in ordered:
        if e.firm_id not in known:
            notes.append(f"final list names unknown firm {e.firm_id!r}")
        elif e.firm_id in out:
            notes.append(f"final list repeats {e.firm_id!r}")
        else:
            out.append(e.firm_id)
    if len(out) > k:
        notes.append(f"final list has {len(out)} firms; truncated to {k}")
        out = out[:k]
    return out, notes


def aggregate_llm(
    mode: AggregationMode | str,
    guidance: str,
    reports: Sequence[SpecialistReport],
    k: int,
    variant: PromptVariant,
    gateway: Gateway,
    pool: CasePool,
    *,
    templates: TemplateSet | None = None,
    temperature: float = 0.0,
    threshold: float = 0.5,
) -> AggregationTrace:
    """LLM-mediated aggregation with the deterministic trace recorded for audit.

    ``importance`` and ``majority`` take one call; ``weight`` takes two (assign
    weights from the roster, then select). An unusable final list falls back
    to the deterministic merge with uniform weights.
    """
    mode = AggregationMode(mode)
    lists = [r.shortlist for r in reports]
    names = [r.name for r in reports]
    if mode is AggregationMode.DETERMINISTIC:
        return aggregate_deterministic(lists, None, k, threshold=threshold)

    t = templates or TemplateSet.builtin()
    agent = t.persona("supervisor")["name"]
    base_payload = {"pool": pool, "reports": list(reports), "k": k, "guidance": guidance, "variant": variant}
    notes: list[str] = []
    flags: list[str] = []
    raw_texts: list[str] = []
    weights: ImportanceWeights | None = None
    turn = 0

    if mode is AggregationMode.WEIGHT:
        prompt = render_supervisor_prompt(SupervisorMode.WEIGHT_ASSIGN, guidance, reports, k, variant, templates=t)
        try:
            obj, results = gateway.complete_structured(
                _request(prompt, pool.case_id, agent, turn, {**base_payload, "mode": "weight-assign"}, temperature),
                prompt.declared_shape,
            )
            raw_texts.append(results[-1].text)
            raw = obj.get("weights")
            weights, more = ImportanceWeights.normalize(raw if isinstance(raw, dict) else {}, names, "llm-assigned")
            notes += more
        except GatewayError as exc:
            notes.append(f"weight assignment failed ({type(exc).__name__}); using uniform weights")
            flags.append("weights-fallback")
            weights = ImportanceWeights.uniform(names)
        turn += 1
        prompt = render_supervisor_prompt(
            SupervisorMode.WEIGHT_SELECT, guidance, reports, k, variant, weights=weights.weights, templates=t
        )
        select_mode = "weight-select"
    elif mode is AggregationMode.IMPORTANCE:
        prompt = render_supervisor_prompt(SupervisorMode.IMPORTANCE, guidance, reports, k, variant, templates=t)
        select_mode = "importance"
    else:
        prompt = render_supervisor_prompt(SupervisorMode.MAJORITY, guidance, reports, k, variant, templates=t)
        weights = ImportanceWeights.uniform(names)
        select_mode = "majority"

    order: list[str] = []
    try:
        obj, results = gateway.complete_structured(
            _request(
                prompt, pool.case_id, agent, turn,
                {**base_payload, "mode": select_mode, "weights": weights}, temperature,
            ),
            prompt.declared_shape,
        )
        raw_texts.append(results[-1].text)
        order, more = extract_final_order(obj, pool, k)
        notes += more
        if mode is AggregationMode.IMPORTANCE:
            ranking = obj.get("agent_importance_ranking")
            if isinstance(ranking, list) and ranking:
                weights, more = ImportanceWeights.from_ranking([str(x) for x in ranking], names)
                notes += more
    except GatewayError as exc:
        notes.append(f"supervisor call failed: {type(exc).__name__}: {exc}")
        raw_texts.extend(getattr(exc, "raw_texts", []))
    weights = weights or ImportanceWeights.uniform(names)

    audit = aggregate_deterministic(lists, weights, k, threshold=threshold)
    if not order:
        fb = aggregate_deterministic(lists, None, k, threshold=threshold)
        log.warning("case %s: supervisor output unusable; deterministic fallback", pool.case_id)
        return AggregationTrace(
            fb.support_counts, fb.f2_scores, fb.consensus_picks, fb.conflict_picks, fb.final, mode,
            fb.weights, (*flags, "fallback", *fb.flags), tuple(notes), audit.final.firm_ids, tuple(raw_texts),
        )

    pad = [f for f in audit.final.firm_ids if f not in order][: max(0, k - len(order))]
    if pad:
        notes.append(f"final list had {len(order)} firms; padded with {pad} from the deterministic order")
        flags.append("padded")
        order += pad
    if len(order) < k:
        flags.append("undersubscribed")
    for n in notes:
        log.info("case %s supervisor: %s", pool.case_id, n)

    means = {f: mean_score(lists, f) for f in order}
    consensus = tuple(f for f in order if _majority(audit.support_counts.get(f, 0), len(lists), threshold))
    conflict = tuple(f for f in order if f not in consensus)
    return AggregationTrace(
        audit.support_counts, audit.f2_scores, consensus, conflict,
        _shortlist("supervisor", order, means), mode, weights,
        tuple(flags), tuple(notes), audit.final.firm_ids, tuple(raw_texts),
    )
