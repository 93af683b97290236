"""One PartnerMAS case end to end: planner, concurrent specialists, supervisor."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

from partnermas.domain import CasePool, RankedShortlist, final_shortlist_size
from partnermas.gateway import Gateway
from partnermas.planner import DEFAULT_BLUEPRINT_CAP, PlannerFailure, PlannerOutput, plan, planner_sample
from partnermas.prompts import PromptVariant, TemplateSet
from partnermas.specialist import SpecialistFailure, SpecialistReport, evaluate_all
from partnermas.supervisor import AggregationMode, AggregationTrace, aggregate_llm

log = logging.getLogger(__name__)


class CaseFailure(RuntimeError):
    """A case that produced no final shortlist; ``stage`` says where it stopped."""

    def __init__(self, case_id: str, stage: str, reason: str, record: dict[str, Any] | None = None) -> None:
        super().__init__(f"case {case_id} failed at {stage}: {reason}")
        self.case_id = case_id
        self.stage = stage
        self.reason = reason
        self.record = record or {}


@dataclass(frozen=True)
class PipelineConfig:
    variant: PromptVariant = PromptVariant.GENERIC
    supervisor_mode: AggregationMode = AggregationMode.DETERMINISTIC
    blueprint_cap: int = DEFAULT_BLUEPRINT_CAP
    sample_seed: int | None = None
    consensus_threshold: float = 0.5
    specialist_concurrency: int | None = None
    temperature: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", PromptVariant(self.variant))
        object.__setattr__(self, "supervisor_mode", AggregationMode(self.supervisor_mode))
        if self.blueprint_cap < 1:
            raise ValueError("blueprint_cap must be positive")
        if not 0 <= self.consensus_threshold < 1:
            raise ValueError("consensus_threshold must lie in [0, 1)")


@dataclass
class PartnerMASResult:
    final: RankedShortlist
    planner: PlannerOutput
    reports: list[SpecialistReport]
    specialist_failures: list[SpecialistFailure]
    trace: AggregationTrace
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "planner": self.planner.to_dict(),
            "specialists": [r.to_dict() for r in self.reports],
            "specialist_failures": [
                {"agent": f.agent, "reason": f.reason, "raw_texts": f.raw_texts} for f in self.specialist_failures
            ],
            "supervisor": self.trace.to_dict(),
            "flags": list(self.flags),
        }


def run_partner_mas(
    pool: CasePool,
    cfg: PipelineConfig,
    gateway: Gateway,
    *,
    templates: TemplateSet | None = None,
) -> PartnerMASResult:
    """Raises ``CaseFailure`` when the planner or every specialist fails."""
    ctx = pool.context
    k = final_shortlist_size(pool.m)
    try:
        planned = plan(
            ctx,
            pool.feature_names,
            planner_sample(pool, cfg.sample_seed),
            cfg.variant,
            gateway,
            cap=cfg.blueprint_cap,
            templates=templates,
            temperature=cfg.temperature,
            payload={"pool": pool},
        )
    except PlannerFailure as exc:
        raise CaseFailure(pool.case_id, "planner", exc.reason, {"planner_raw_texts": exc.raw_texts}) from exc

    rnd = evaluate_all(
        planned.blueprints, ctx, pool, cfg.variant, gateway,
        max_workers=cfg.specialist_concurrency, templates=templates, temperature=cfg.temperature,
    )
    flags = [f"specialist-failed:{f.agent}" for f in rnd.failures]
    flags += [f"specialist-short:{r.name}" for r in rnd.reports if r.short]
    usable = [r for r in rnd.reports if len(r.shortlist)]
    if not usable:
        raise CaseFailure(
            pool.case_id, "specialists", "no specialist produced a usable shortlist",
            {"planner": planned.to_dict(), "specialist_failures": [f.reason for f in rnd.failures]},
        )

    trace = aggregate_llm(
        cfg.supervisor_mode, planned.strategic_guidance, usable, k, cfg.variant, gateway, pool,
        templates=templates, temperature=cfg.temperature, threshold=cfg.consensus_threshold,
    )
    flags += [f"supervisor-{f}" for f in trace.flags]
    return PartnerMASResult(trace.final, planned, rnd.reports, rnd.failures, trace, flags)
