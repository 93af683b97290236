"""Planner agent: turns a deal context into strategic guidance and specialist blueprints."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Any, Sequence

from partnermas.domain import AgentBlueprint, CandidateRecord, CasePool, TaskContext
from partnermas.gateway import CompletionRequest, Gateway, GatewayError, Role, StructuredOutputError
from partnermas.prompts import PromptVariant, TemplateSet, render_planner_prompt

log = logging.getLogger(__name__)

DEFAULT_BLUEPRINT_CAP = 10


class PlannerFailure(RuntimeError):
    def __init__(self, case_id: str, reason: str, raw_texts: Sequence[str] = ()) -> None:
        super().__init__(f"planner failed for case {case_id}: {reason}")
        self.case_id = case_id
        self.reason = reason
        self.raw_texts = list(raw_texts)


@dataclass(frozen=True)
class PlannerOutput:
    strategic_guidance: str
    blueprints: tuple[AgentBlueprint, ...]
    requested_count: int = 0
    raw_text: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategic_guidance": self.strategic_guidance,
            "blueprints": [b.to_dict() for b in self.blueprints],
            "requested_count": self.requested_count,
            "raw_text": self.raw_text,
            "warnings": list(self.warnings),
        }


def planner_sample(pool: CasePool, seed: int | None = None) -> tuple[CandidateRecord, CandidateRecord]:
    """The two candidates shown to the planner: first two in pool order, or a seeded draw."""
    if seed is None:
        return pool.candidates[0], pool.candidates[1]
    rng = random.Random(f"{seed}:{pool.case_id}")
    a, b = rng.sample(range(pool.m), 2)
    return pool.candidates[a], pool.candidates[b]


def parse_planner_output(obj: dict[str, Any], cap: int, case_id: str = "") -> PlannerOutput:
    guidance = obj.get("strategic_guidance")
    if not isinstance(guidance, str) or not guidance.strip():
        raise PlannerFailure(case_id, "empty strategic_guidance")
    agents = obj.get("agents")
    if not isinstance(agents, list):
        raise PlannerFailure(case_id, "'agents' is not a list")

    warnings: list[str] = []
    blueprints: list[AgentBlueprint] = []
    names: set[str] = set()
    for i, item in enumerate(agents):
        if not isinstance(item, dict):
            warnings.append(f"agent #{i} is not an object; dropped")
            continue
        # Planners occasionally say "abilities" or "guides" instead.
        fields = {
            "name": item.get("name"),
            "role": item.get("role"),
            "ability": item.get("ability") or item.get("abilities"),
            "profile": item.get("profile") or item.get("guides"),
        }
        fields = {k: ", ".join(map(str, v)) if isinstance(v, list) else v for k, v in fields.items()}
        try:
            bp = AgentBlueprint(**fields)  # type: ignore[arg-type]
        except (TypeError, ValueError) as exc:
            warnings.append(f"agent #{i} invalid: {exc}")
            continue
        if bp.name in names:
            warnings.append(f"duplicate agent name {bp.name!r}; keeping the first")
            continue
        names.add(bp.name)
        blueprints.append(bp)

    if len(blueprints) > cap:
        warnings.append(f"planner requested {len(blueprints)} agents; capped at {cap}")
        blueprints = blueprints[:cap]
    if not blueprints:
        raise PlannerFailure(case_id, "no valid agent blueprints")
    for w in warnings:
        log.warning("case %s planner: %s", case_id, w)
    return PlannerOutput(guidance.strip(), tuple(blueprints), len(agents), warnings=tuple(warnings))


def plan(
    ctx: TaskContext,
    schema: Sequence[str],
    sample: Sequence[CandidateRecord],
    variant: PromptVariant,
    gateway: Gateway,
    *,
    cap: int = DEFAULT_BLUEPRINT_CAP,
    templates: TemplateSet | None = None,
    temperature: float = 0.0,
    payload: dict[str, Any] | None = None,
) -> PlannerOutput:
    prompt = render_planner_prompt(ctx, schema, sample, variant, templates)
    persona = (templates or TemplateSet.builtin()).persona("planner")
    request = CompletionRequest(
        Role.PLANNER,
        prompt.system_text,
        prompt.user_text,
        case_id=ctx.company_id,
        agent_name=persona["name"],
        temperature=temperature,
        payload={"context": ctx, "schema": list(schema), "variant": PromptVariant(variant), **(payload or {})},
    )
    try:
        obj, results = gateway.complete_structured(request, prompt.declared_shape)
    except StructuredOutputError as exc:
        raise PlannerFailure(ctx.company_id, exc.kind, exc.raw_texts) from exc
    except GatewayError as exc:
        raise PlannerFailure(ctx.company_id, f"{type(exc).__name__}: {exc}") from exc
    out = parse_planner_output(obj, cap, ctx.company_id)
    return PlannerOutput(out.strategic_guidance, out.blueprints, out.requested_count, results[-1].text, out.warnings)
