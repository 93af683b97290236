"""Prompt rendering for every agent role, in generic and business variants.

Templates live on disk under ``templates/<version>/`` as ``<name>.system.txt``
and ``<name>.user.txt`` pairs. Placeholders are ``{identifier}`` (lowercase
letters, digits, underscores); every placeholder must be supplied at render
time and substituted values are never re-scanned. The business guidance block
is injected through the ``{business_hint}`` placeholder and renders empty in
the generic variant.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Sequence

from partnermas.domain import (
    MISSING_TOKEN,
    AgentBlueprint,
    CandidateRecord,
    CasePool,
    FeatureKind,
    FeatureValue,
    RankedShortlist,
    TaskContext,
)
from partnermas.gateway.structured import Shape

if TYPE_CHECKING:
    from partnermas.specialist import SpecialistReport

TEMPLATE_VERSION = "v1"
PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


class PromptVariant(str, Enum):
    GENERIC = "generic"
    BUSINESS = "business"


class SupervisorMode(str, Enum):
    IMPORTANCE = "importance"
    WEIGHT_ASSIGN = "weight-assign"
    WEIGHT_SELECT = "weight-select"
    MAJORITY = "majority"


class TemplateError(KeyError):
    pass


PLANNER_SHAPE = Shape("planner", ("strategic_guidance", "agents"))
SPECIALIST_SHAPE = Shape("specialist", ("evaluation_focus", "overall_rationale", "ranked_candidates"))
SUPERVISOR_FINAL_SHAPE = Shape("supervisor-final", ("final_shortlist",))
WEIGHT_ASSIGN_SHAPE = Shape("weight-assign", ("weights",))
SINGLE_SHAPE = Shape("single", ("ranked_candidates",))
SINGLE_REFLECT_SHAPE = Shape("single-reflect", ("selected_list",))
DEBATE_EVAL_SHAPE = Shape("debate-evaluate", ("evaluations",))
DEBATE_DEBATE_SHAPE = Shape("debate-debate", ("agree", "disagree", "questions"))
DEBATE_REFLECT_SHAPE = Shape(
    "debate-reflect",
    (
        "reflection_summary",
        "improvement_suggestions",
        "score_decisions.reasoning",
        "score_decisions.stick_with_previous_score",
    ),
)
DEBATE_SUPERVISOR_SHAPE = Shape("debate-supervisor", ("final_shortlist",))


@dataclass(frozen=True)
class RenderedPrompt:
    system_text: str
    user_text: str
    declared_shape: Shape
    template: str
    version: str = TEMPLATE_VERSION


class TemplateSet:
    """A versioned directory of prompt templates plus persona defaults."""

    def __init__(self, texts: Mapping[str, str], personas: Mapping[str, Any], version: str) -> None:
        self.texts = dict(texts)
        self.personas = dict(personas)
        self.version = version

    @classmethod
    def from_dir(cls, path: str | Path, version: str | None = None) -> TemplateSet:
        path = Path(path)
        texts = {p.name[: -len(".txt")]: p.read_text(encoding="utf-8").rstrip("\n") for p in path.glob("*.txt")}
        personas = json.loads((path / "personas.json").read_text(encoding="utf-8"))
        return cls(texts, personas, version or path.name)

    @classmethod
    def builtin(cls, version: str = TEMPLATE_VERSION) -> TemplateSet:
        return _builtin(version)

    def text(self, name: str) -> str:
        try:
            return self.texts[name]
        except KeyError:
            raise TemplateError(f"template {name!r} not found in version {self.version}") from None

    @property
    def business_hint(self) -> str:
        return self.text("business_hint")

    def persona(self, key: str) -> dict[str, str]:
        return dict(self.personas[key])

    def committee(self) -> list[AgentBlueprint]:
        return [AgentBlueprint.from_dict(p) for p in self.personas["committee"]]

    def render(self, name: str, values: Mapping[str, Any], shape: Shape) -> RenderedPrompt:
        return RenderedPrompt(
            substitute(self.text(f"{name}.system"), values),
            substitute(self.text(f"{name}.user"), values),
            shape,
            name,
            self.version,
        )


@lru_cache(maxsize=None)
def _builtin(version: str) -> TemplateSet:
    root = resources.files("partnermas.prompts").joinpath("templates", version)
    return TemplateSet.from_dir(Path(str(root)), version)


def substitute(template: str, values: Mapping[str, Any]) -> str:
    def repl(match: re.Match[str]) -> str:
        key = match.group(1)
        if key not in values:
            raise TemplateError(f"no value for placeholder {{{key}}}")
        return str(values[key])

    return PLACEHOLDER.sub(repl, template)


def residual_placeholders(text: str) -> list[str]:
    return PLACEHOLDER.findall(text)


# ---------------------------------------------------------------------------
# Serialization helpers
# ---------------------------------------------------------------------------

def _is_coordinate(name: str) -> bool:
    lowered = name.lower()
    return lowered.endswith(("lat", "lng", "lon")) or "lat_" in lowered or "lng_" in lowered


def format_value(name: str, value: FeatureValue | None) -> str:
    if value is None or value.is_missing:
        return MISSING_TOKEN
    if value.kind is FeatureKind.NUMERIC:
        number = float(value.value)  # type: ignore[arg-type]
        if _is_coordinate(name):
            return f"{number:.3f}"
        if number.is_integer():
            return str(int(number))
        text = f"{number:.4g}"
        return str(round(number)) if "e" in text else text
    return " ".join(str(value.value).split())


def render_profile(profile: Mapping[str, FeatureValue]) -> str:
    return "\n".join(f"- {k}: {format_value(k, v)}" for k, v in profile.items())


def render_table(candidates: Sequence[CandidateRecord], feature_names: Sequence[str]) -> str:
    """Aligned plain-text table, firm_id first, rows in the given order."""
    header = ["firm_id", *feature_names]
    rows = [[c.firm_id, *(format_value(n, c.features.get(n)) for n in feature_names)] for c in candidates]
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]

    def line(cells: Sequence[str]) -> str:
        return " | ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip()

    out = [line(header), "-+-".join("-" * w for w in widths)]
    out.extend(line(r) for r in rows)
    return "\n".join(out)


def _hint_block(variant: PromptVariant, templates: TemplateSet) -> str:
    if PromptVariant(variant) is PromptVariant.BUSINESS:
        return f"# Business Hint:\n{templates.business_hint}\n\n"
    return ""


def render_shortlist_lines(shortlist: RankedShortlist, rationales: Mapping[str, str] | None = None) -> str:
    lines = []
    for e in shortlist.entries:
        why = (rationales or {}).get(e.firm_id, "")
        lines.append(f"  {e.rank}. {e.firm_id} (score {e.score:g})" + (f": {why}" if why else ""))
    return "\n".join(lines) if lines else "  (no candidates)"


def render_specialist_reports(reports: Sequence[SpecialistReport]) -> str:
    blocks = []
    for r in reports:
        bp = r.blueprint
        blocks.append(
            f"## Agent: {bp.name}\n"
            f"Role: {bp.role}\n"
            f"Evaluation focus: {r.evaluation_focus}\n"
            f"Overall rationale: {r.overall_rationale}\n"
            f"Ranked candidates:\n{render_shortlist_lines(r.shortlist, r.per_entry_rationales)}"
        )
    return "\n\n".join(blocks)


# ---------------------------------------------------------------------------
# Renderers
# ---------------------------------------------------------------------------

def render_planner_prompt(
    ctx: TaskContext,
    schema: Sequence[str],
    sample: Sequence[CandidateRecord],
    variant: PromptVariant,
    templates: TemplateSet | None = None,
) -> RenderedPrompt:
    if len(sample) != 2:
        raise ValueError(f"planner sample must have exactly 2 candidates, got {len(sample)}")
    t = templates or TemplateSet.builtin()
    persona = t.persona("planner")
    values = {
        **persona,
        "business_hint": _hint_block(variant, t),
        "lead_profile": render_profile(ctx.lead_profile),
        "target_profile": render_profile(ctx.target_profile),
        "feature_names": ", ".join(schema),
        "sample_candidates": render_table(sample, schema),
    }
    return t.render("planner", values, PLANNER_SHAPE)


def render_specialist_prompt(
    blueprint: AgentBlueprint,
    ctx: TaskContext,
    pool: CasePool,
    k_prime: int,
    templates: TemplateSet | None = None,
) -> RenderedPrompt:
    t = templates or TemplateSet.builtin()
    values = {
        **blueprint.to_dict(),
        "target_profile": render_profile(ctx.target_profile),
        "lead_profile": render_profile(ctx.lead_profile),
        "candidates_data": render_table(pool.candidates, pool.feature_names),
        "dynamic_top_k": k_prime,
        "total_candidates": pool.m,
    }
    return t.render("specialist", values, SPECIALIST_SHAPE)


def render_supervisor_prompt(
    mode: SupervisorMode | str,
    guidance: str,
    reports: Sequence[SpecialistReport],
    k: int,
    variant: PromptVariant,
    *,
    weights: Mapping[str, float] | None = None,
    templates: TemplateSet | None = None,
) -> RenderedPrompt:
    """Render one of the four supervisor prompts.

    ``weight-assign`` shows only the agent roster (weights are fixed before
    the rankings are seen); ``weight-select`` needs the assigned ``weights``.
    """
    t = templates or TemplateSet.builtin()
    mode = SupervisorMode(mode)
    values: dict[str, Any] = {
        **t.persona("supervisor"),
        "top_k": k,
        "business_hint": _hint_block(variant, t),
        "planner_strategic_guidance": guidance or "(none provided)",
        "specialist_reports": render_specialist_reports(reports),
    }
    if mode is SupervisorMode.IMPORTANCE:
        return t.render("supervisor_importance", values, SUPERVISOR_FINAL_SHAPE)
    if mode is SupervisorMode.WEIGHT_ASSIGN:
        values["agent_roster"] = "\n".join(
            f"- {r.blueprint.name}: {r.blueprint.role}; focus: {r.blueprint.profile}" for r in reports
        )
        return t.render("supervisor_weight_assign", values, WEIGHT_ASSIGN_SHAPE)
    if mode is SupervisorMode.WEIGHT_SELECT:
        if weights is None:
            raise ValueError("weight-select rendering needs the assigned weights")
        values["agent_weights"] = "\n".join(f"- {name}: {w:.4f}" for name, w in weights.items())
        return t.render("supervisor_weight_select", values, SUPERVISOR_FINAL_SHAPE)
    return t.render("supervisor_majority", values, SUPERVISOR_FINAL_SHAPE)


class BaselineKind(str, Enum):
    SINGLE = "single"
    SINGLE_REFLECT = "single-reflect"
    DEBATE_EVAL = "debate-eval"
    DEBATE_DEBATE = "debate-debate"
    DEBATE_REFLECT = "debate-reflect"
    DEBATE_SUPERVISOR = "debate-supervisor"


SCORE_KEYS = ("integrity_score", "capability_score", "fit_score")
RATIONALE_KEYS = ("integrity_rationale", "capability_rationale", "fit_rationale")

_SCORE_LEAK = (
    re.compile(r"(?i)\b(integrity|capability|fit)_score\b"),
    re.compile(r"(?i)\bscore\"?\s*[:=]\s*\d"),
    re.compile(r"(?i)\bscore\s*\(\s*\d"),
)


def strip_scores(evaluations: Mapping[str, Mapping[str, Any]]) -> dict[str, dict[str, str]]:
    """Drop every numeric score, keeping only rationale strings per firm."""
    return {
        firm: {k: str(v) for k, v in body.items() if k in RATIONALE_KEYS}
        for firm, body in evaluations.items()
    }


def audit_score_hiding(text: str) -> list[str]:
    """Return any score-field leaks found in a rendered debate prompt."""
    return [m.group(0) for pat in _SCORE_LEAK for m in pat.finditer(text)]


def render_evaluations(evaluations: Mapping[str, Mapping[str, Any]], *, with_scores: bool) -> str:
    lines = []
    for firm, body in evaluations.items():
        parts = []
        for axis in ("integrity", "capability", "fit"):
            why = body.get(f"{axis}_rationale", "")
            if with_scores and f"{axis}_score" in body:
                parts.append(f"    {axis}_score={body[f'{axis}_score']}; {axis}: {why}")
            else:
                parts.append(f"    {axis}: {why}")
        lines.append(f"- {firm}:\n" + "\n".join(parts))
    return "\n".join(lines)


def _committee_context(ctx: TaskContext, k: int) -> str:
    return f"Lead investor:\n{render_profile(ctx.lead_profile)}\nThe committee must shortlist {k} co-investors."


def render_baseline_prompts(kind: BaselineKind | str, inputs: Mapping[str, Any],
                            templates: TemplateSet | None = None) -> RenderedPrompt:
    """Render a Single Agent or Debate MAS prompt.

    Required ``inputs`` per kind:

    * ``single``: pool, k, variant
    * ``single-reflect``: pool, k, shortlists (list of RankedShortlist)
    * ``debate-eval``: agent (AgentBlueprint), pool, k, variant
    * ``debate-debate``: agent, peers ({name: evaluations}), pool, k
    * ``debate-reflect``: agent, evaluations, feedback (list of dicts), pool, k
    * ``debate-supervisor``: pool, k, final_evaluations ({name: evaluations}), debate_summary
    """
    t = templates or TemplateSet.builtin()
    kind = BaselineKind(kind)
    pool: CasePool = inputs["pool"]
    ctx = pool.context
    k = inputs["k"]
    target = render_profile(ctx.target_profile)

    if kind is BaselineKind.SINGLE:
        values = {
            **t.persona("single"),
            "business_hint": _hint_block(inputs.get("variant", PromptVariant.GENERIC), t),
            "target_profile": target,
            "lead_profile": render_profile(ctx.lead_profile),
            "candidates_list": render_table(pool.candidates, pool.feature_names),
            "top_k": k,
        }
        return t.render("single", values, SINGLE_SHAPE)

    if kind is BaselineKind.SINGLE_REFLECT:
        lists: Sequence[RankedShortlist] = inputs["shortlists"]
        blocks = [f"## List {i}\n{render_shortlist_lines(s)}" for i, s in enumerate(lists, start=1)]
        values = {
            **t.persona("single"),
            "num_lists": len(lists),
            "top_k": k,
            "target_profile": target,
            "shortlists": "\n\n".join(blocks),
        }
        return t.render("single_reflect", values, SINGLE_REFLECT_SHAPE)

    if kind is BaselineKind.DEBATE_SUPERVISOR:
        finals: Mapping[str, Mapping[str, Any]] = inputs["final_evaluations"]
        values = {
            **t.persona("debate_supervisor"),
            "top_k": k,
            "target_profile": target,
            "final_evaluations": "\n\n".join(
                f"## {name}\n{render_evaluations(ev, with_scores=True)}" for name, ev in finals.items()
            ),
            "debate_summary": inputs.get("debate_summary") or "(no debate feedback)",
        }
        return t.render("debate_supervisor", values, DEBATE_SUPERVISOR_SHAPE)

    agent: AgentBlueprint = inputs["agent"]
    base = {**agent.to_dict(), "context": _committee_context(ctx, k)}
    if kind is BaselineKind.DEBATE_EVAL:
        values = {
            **base,
            "business_hint": _hint_block(inputs.get("variant", PromptVariant.GENERIC), t),
            "target_profile": target,
            "candidates_data": render_table(pool.candidates, pool.feature_names),
        }
        return t.render("debate_evaluate", values, DEBATE_EVAL_SHAPE)
    if kind is BaselineKind.DEBATE_DEBATE:
        peers: Mapping[str, Mapping[str, Any]] = inputs["peers"]
        if agent.name in peers:
            raise ValueError("debate payload must not include the agent's own evaluations")
        values = {
            **base,
            "peers_list": ", ".join(peers),
            "stripped_evaluations": "\n\n".join(
                f"## {name}\n{render_evaluations(strip_scores(ev), with_scores=False)}"
                for name, ev in peers.items()
            ),
        }
        return t.render("debate_debate", values, DEBATE_DEBATE_SHAPE)
    if kind is BaselineKind.DEBATE_REFLECT:
        feedback: Iterable[Mapping[str, Any]] = inputs.get("feedback", ())
        values = {
            **base,
            "evaluations": render_evaluations(inputs["evaluations"], with_scores=True),
            "peer_feedback": render_feedback(feedback) or "(no feedback received)",
        }
        return t.render("debate_reflect", values, DEBATE_REFLECT_SHAPE)
    raise ValueError(f"unhandled baseline kind {kind}")


def render_feedback(feedback: Iterable[Mapping[str, Any]]) -> str:
    lines = []
    for item in feedback:
        who = item.get("from", "peer")
        for stance in ("agree", "disagree"):
            for point in item.get(stance, ()):
                lines.append(f"- {who} ({stance}s): {point}")
        for q in item.get("questions", ()):
            lines.append(f"- {who} asks: {q}")
    return "\n".join(lines)


__all__ = [
    "BaselineKind",
    "PromptVariant",
    "RenderedPrompt",
    "SupervisorMode",
    "TEMPLATE_VERSION",
    "TemplateSet",
    "audit_score_hiding",
    "format_value",
    "render_baseline_prompts",
    "render_planner_prompt",
    "render_specialist_prompt",
    "render_supervisor_prompt",
    "render_table",
    "residual_placeholders",
    "strip_scores",
]
