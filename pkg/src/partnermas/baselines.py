"""Comparison systems: a single agent with self-reflection and a three-agent debate committee."""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from partnermas.domain import (
    AgentBlueprint,
    CasePool,
    RankedShortlist,
    ScoreScale,
    ShortlistEntry,
    final_shortlist_size,
)
from partnermas.gateway import CompletionRequest, Gateway, GatewayError, Role
from partnermas.prompts import (
    RATIONALE_KEYS,
    SCORE_KEYS,
    BaselineKind,
    PromptVariant,
    TemplateSet,
    audit_score_hiding,
    render_baseline_prompts,
    render_feedback,
)
from partnermas.specialist import normalize_entries, parse_ranked_candidates
from partnermas.supervisor import extract_final_order

log = logging.getLogger(__name__)


class BaselineFailure(RuntimeError):
    def __init__(self, case_id: str, reason: str) -> None:
        super().__init__(f"case {case_id}: {reason}")
        self.case_id = case_id
        self.reason = reason


# -- single agent -------------------------------------------------------------


@dataclass(frozen=True)
class SingleAgentConfig:
    runs_k: int = 1
    variant: PromptVariant = PromptVariant.GENERIC
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not isinstance(self.runs_k, int) or self.runs_k < 1:
            raise ValueError(f"runs_k must be a positive integer, got {self.runs_k!r}")
        object.__setattr__(self, "variant", PromptVariant(self.variant))


@dataclass(frozen=True)
class SingleAgentResult:
    final: RankedShortlist
    runs: tuple[RankedShortlist, ...]
    selected: int
    flags: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()
    raw_texts: tuple[str, ...] = field(default=(), compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "final": self.final.to_dict(),
            "runs": [r.to_dict() for r in self.runs],
            "selected": self.selected,
            "flags": list(self.flags),
            "notes": list(self.notes),
            "raw_texts": list(self.raw_texts),
        }


def _parse_selection(value: Any, n: int) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, str):
        value = value.strip().lower().removeprefix("list").strip()
    try:
        idx = int(value)
    except (TypeError, ValueError):
        return None
    return idx if 1 <= idx <= n else None


def run_single(
    pool: CasePool,
    cfg: SingleAgentConfig,
    gateway: Gateway,
    *,
    templates: TemplateSet | None = None,
) -> SingleAgentResult:
    """``runs_k`` independent generations, then one reflection call choosing among them."""
    t = templates or TemplateSet.builtin()
    agent = t.persona("single")["name"]
    k = final_shortlist_size(pool.m)
    prompt = render_baseline_prompts(BaselineKind.SINGLE, {"pool": pool, "k": k, "variant": cfg.variant}, t)
    known = set(pool.firm_ids)
    runs: list[RankedShortlist] = []
    notes: list[str] = []
    flags: list[str] = []
    raw_texts: list[str] = []

    for i in range(cfg.runs_k):
        req = CompletionRequest(
            Role.SINGLE, prompt.system_text, prompt.user_text, case_id=pool.case_id, agent_name=agent,
            turn_index=i, temperature=cfg.temperature,
            payload={"kind": "single", "pool": pool, "k": k, "run": i, "variant": cfg.variant},
        )
        try:
            obj, results = gateway.complete_structured(req, prompt.declared_shape)
        except GatewayError as exc:
            flags.append(f"run-failed:{i + 1}")
            notes.append(f"run {i + 1} failed: {type(exc).__name__}: {exc}")
            continue
        raw_texts.append(results[-1].text)
        entries, _, violations = normalize_entries(
            parse_ranked_candidates(obj.get("ranked_candidates")), known, k, ScoreScale.ONE_TO_FIVE
        )
        notes += [f"run {i + 1}: {v}" for v in violations]
        runs.append(RankedShortlist(f"{agent}#{i + 1}", tuple(entries), ScoreScale.ONE_TO_FIVE))

    usable = [r for r in runs if len(r)]
    if not usable:
        raise BaselineFailure(pool.case_id, "no usable single-agent run")
    if cfg.runs_k == 1:
        return _single_result(usable[0], runs, 1, flags, notes, raw_texts)

    selected = 1
    reflect = render_baseline_prompts(BaselineKind.SINGLE_REFLECT, {"pool": pool, "k": k, "shortlists": runs}, t)
    req = CompletionRequest(
        Role.SINGLE, reflect.system_text, reflect.user_text, case_id=pool.case_id, agent_name=agent,
        turn_index=cfg.runs_k, temperature=cfg.temperature,
        payload={"kind": "single-reflect", "pool": pool, "k": k, "shortlists": list(runs)},
    )
    try:
        obj, results = gateway.complete_structured(req, reflect.declared_shape)
        raw_texts.append(results[-1].text)
        choice = _parse_selection(obj.get("selected_list"), len(runs))
        if choice is None or not len(runs[choice - 1]):
            flags.append("selection-fallback")
            notes.append(f"reflection selected {obj.get('selected_list')!r}; using the first list")
        else:
            selected = choice
    except GatewayError as exc:
        flags.append("selection-fallback")
        notes.append(f"reflection failed: {type(exc).__name__}: {exc}")
    if selected == 1 and not len(runs[0]):
        selected = runs.index(usable[0]) + 1
    return _single_result(runs[selected - 1], runs, selected, flags, notes, raw_texts)


def _single_result(final, runs, selected, flags, notes, raw_texts) -> SingleAgentResult:
    renamed = RankedShortlist("single-agent", final.entries, final.scale)
    return SingleAgentResult(renamed, tuple(runs), selected, tuple(flags), tuple(notes), tuple(raw_texts))


# -- debate committee ---------------------------------------------------------


@dataclass(frozen=True)
class FirmAssessment:
    integrity_score: int
    capability_score: int
    fit_score: int
    integrity_rationale: str
    capability_rationale: str
    fit_rationale: str

    @property
    def composite(self) -> float:
        return (self.integrity_score + self.capability_score + self.fit_score) / 3

    def to_dict(self) -> dict[str, Any]:
        return {
            "integrity_score": self.integrity_score,
            "integrity_rationale": self.integrity_rationale,
            "capability_score": self.capability_score,
            "capability_rationale": self.capability_rationale,
            "fit_score": self.fit_score,
            "fit_rationale": self.fit_rationale,
        }


@dataclass(frozen=True)
class DebateEvaluation:
    agent: str
    firms: Mapping[str, FirmAssessment]

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {f: a.to_dict() for f, a in self.firms.items()}


def _score(value: Any) -> int | None:
    if isinstance(value, bool):
        return None
    try:
        x = float(value)
    except (TypeError, ValueError):
        return None
    if not math.isfinite(x):
        return None
    return int(min(max(round(x), 1), 5))


def parse_debate_evaluation(agent: str, raw: Any, pool: CasePool) -> tuple[DebateEvaluation, list[str]]:
    """Validate a committee evaluation; unknown firms and unscored entries are dropped."""
    notes: list[str] = []
    if not isinstance(raw, dict):
        return DebateEvaluation(agent, {}), ["evaluations is not an object"]
    known = set(pool.firm_ids)
    firms: dict[str, FirmAssessment] = {}
    for firm, body in raw.items():
        firm = str(firm).strip()
        if firm not in known:
            notes.append(f"unknown firm {firm!r}")
            continue
        if not isinstance(body, dict):
            notes.append(f"{firm}: evaluation is not an object")
            continue
        scores = [_score(body.get(key)) for key in SCORE_KEYS]
        if any(s is None for s in scores):
            notes.append(f"{firm}: missing or non-numeric score")
            continue
        for key, s in zip(SCORE_KEYS, scores):
            raw_s = body.get(key)
            if isinstance(raw_s, (int, float)) and raw_s != s:
                notes.append(f"{firm}: {key} {raw_s!r} coerced to {s}")
        whys = []
        for key in RATIONALE_KEYS:
            why = str(body.get(key) or "").strip()
            if not why:
                notes.append(f"{firm}: empty {key}")
                why = "no rationale given"
            whys.append(why)
        firms[firm] = FirmAssessment(*scores, *whys)  # type: ignore[arg-type]
    return DebateEvaluation(agent, {f: firms[f] for f in pool.firm_ids if f in firms}), notes


@dataclass(frozen=True)
class PeerFeedback:
    source: str
    target: str
    agree: tuple[str, ...] = ()
    disagree: tuple[str, ...] = ()
    questions: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "from": self.source,
            "to": self.target,
            "agree": list(self.agree),
            "disagree": list(self.disagree),
            "questions": list(self.questions),
        }


def parse_feedback(source: str, obj: Mapping[str, Any], peers: Sequence[str]) -> tuple[list[PeerFeedback], list[str]]:
    """Split one agent's debate output into per-peer feedback.

    Entries naming the agent itself, the supervisor or anyone outside
    ``peers`` are discarded. A question goes to every peer it names, or to
    all peers when it names none.
    """
    notes: list[str] = []
    buckets: dict[str, dict[str, list[str]]] = {p: {"agree": [], "disagree": [], "questions": []} for p in peers}
    for stance in ("agree", "disagree"):
        items = obj.get(stance) or []
        if not isinstance(items, list):
            notes.append(f"{stance} is not a list")
            continue
        for item in items:
            if not isinstance(item, dict):
                continue
            target = str(item.get("agent_name", "")).strip()
            if target not in buckets:
                notes.append(f"{stance} addressed to invalid peer {target!r}")
                continue
            points = item.get("points") or []
            points = [points] if isinstance(points, str) else points
            buckets[target][stance] += [str(p) for p in points if str(p).strip()]
    questions = obj.get("questions") or []
    for q in questions if isinstance(questions, list) else [questions]:
        q = str(q).strip()
        if not q:
            continue
        named = [p for p in peers if re.search(rf"(?<!\w){re.escape(p)}(?!\w)", q, re.IGNORECASE)]
        for p in named or peers:
            buckets[p]["questions"].append(q)
    out = [
        PeerFeedback(source, p, tuple(b["agree"]), tuple(b["disagree"]), tuple(b["questions"]))
        for p, b in buckets.items()
    ]
    return out, notes


@dataclass(frozen=True)
class Reflection:
    agent: str
    stick: bool
    revised: bool
    summary: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"agent": self.agent, "stick_with_previous_score": self.stick, "revised": self.revised,
                "summary": self.summary}


def _as_bool(value: Any) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "false"):
        return value.strip().lower() == "true"
    return None


@dataclass
class DebateRound:
    feedback: list[PeerFeedback] = field(default_factory=list)
    reflections: list[Reflection] = field(default_factory=list)
    evaluations: dict[str, DebateEvaluation] = field(default_factory=dict)
    debate_prompts: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "feedback": [f.to_dict() for f in self.feedback],
            "reflections": [r.to_dict() for r in self.reflections],
            "evaluations": {a: e.to_dict() for a, e in sorted(self.evaluations.items())},
        }


@dataclass
class DebateTranscript:
    agents: tuple[AgentBlueprint, ...]
    initial_evaluations: dict[str, DebateEvaluation]
    rounds: list[DebateRound]
    final: RankedShortlist
    flags: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    raw_texts: list[str] = field(default_factory=list)

    @property
    def final_evaluations(self) -> dict[str, DebateEvaluation]:
        return self.rounds[-1].evaluations if self.rounds else self.initial_evaluations

    def debate_prompts(self) -> list[str]:
        return [p for r in self.rounds for _, p in sorted(r.debate_prompts.items())]

    def to_dict(self) -> dict[str, Any]:
        return {
            "agents": [a.to_dict() for a in self.agents],
            "initial_evaluations": {a: e.to_dict() for a, e in sorted(self.initial_evaluations.items())},
            "rounds": [r.to_dict() for r in self.rounds],
            "final": self.final.to_dict(),
            "flags": list(self.flags),
            "notes": list(self.notes),
            "raw_texts": list(self.raw_texts),
        }


def fallback_synthesis(evaluations: Mapping[str, DebateEvaluation], pool: CasePool, k: int) -> RankedShortlist:
    """Top ``k`` firms by mean composite score across agents; ties by firm id."""
    per_firm: dict[str, list[float]] = {}
    for ev in evaluations.values():
        for firm, a in ev.firms.items():
            per_firm.setdefault(firm, []).append(a.composite)
    means = {f: math.fsum(v) / len(v) for f, v in per_firm.items()}
    order = sorted(means, key=lambda f: (-means[f], f))[:k]
    return RankedShortlist(
        "debate-fallback", tuple(ShortlistEntry(f, i, means[f]) for i, f in enumerate(order, 1)), ScoreScale.ONE_TO_FIVE
    )


def _barrier(
    fn: Callable[[AgentBlueprint, list[str], list[str]], Any],
    agents: Sequence[AgentBlueprint],
    notes: list[str],
    raw_texts: list[str],
) -> list[Any]:
    """Run one phase for every agent concurrently and wait for all of them.

    Each agent logs into its own buffers, merged afterwards in committee
    order so transcripts do not depend on thread scheduling.
    """
    bufs = [([], []) for _ in agents]
    with ThreadPoolExecutor(max_workers=max(1, len(agents))) as ex:
        out = list(ex.map(lambda a, b: fn(a, *b), agents, bufs))
    for n, r in bufs:
        notes.extend(n)
        raw_texts.extend(r)
    return out


def run_debate(
    pool: CasePool,
    variant: PromptVariant,
    gateway: Gateway,
    *,
    committee: Sequence[AgentBlueprint] | None = None,
    rounds: int = 1,
    templates: TemplateSet | None = None,
    temperature: float = 0.0,
) -> DebateTranscript:
    """Evaluate, debate with scores hidden, reflect; then one supervisor synthesis.

    Each phase waits for every agent before the next starts. An agent that
    fails a phase keeps its last valid evaluation. With ``rounds=1`` this is
    exactly 3 + 3 + 3 + 1 gateway calls.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    t = templates or TemplateSet.builtin()
    agents = tuple(committee) if committee is not None else tuple(t.committee())
    if len(agents) != 3 or len({a.name for a in agents}) != 3:
        raise ValueError("the debate committee needs exactly three distinctly named agents")
    variant = PromptVariant(variant)
    k = final_shortlist_size(pool.m)
    case = pool.case_id
    flags: list[str] = []
    notes: list[str] = []
    raw_texts: list[str] = []

    def call(agent: AgentBlueprint, kind: BaselineKind, inputs: dict[str, Any], turn: int, raw: list[str]) -> dict[str, Any]:
        prompt = render_baseline_prompts(kind, {"pool": pool, "k": k, "agent": agent, **inputs}, t)
        req = CompletionRequest(
            Role.DEBATE_AGENT, prompt.system_text, prompt.user_text, case_id=case, agent_name=agent.name,
            turn_index=turn, temperature=temperature,
            payload={"kind": kind.value, "pool": pool, "k": k, "agent": agent, **inputs},
        )
        obj, results = gateway.complete_structured(req, prompt.declared_shape)
        raw.append(results[-1].text)
        return obj

    def evaluate(agent: AgentBlueprint, notes: list[str], raw: list[str]) -> DebateEvaluation | None:
        try:
            obj = call(agent, BaselineKind.DEBATE_EVAL, {"variant": variant}, 0, raw)
        except GatewayError as exc:
            notes.append(f"{agent.name} evaluation failed: {type(exc).__name__}")
            return None
        ev, more = parse_debate_evaluation(agent.name, obj.get("evaluations"), pool)
        notes.extend(f"{agent.name}: {n}" for n in more)
        return ev if ev.firms else None

    current: dict[str, DebateEvaluation] = {}
    for agent, ev in zip(agents, _barrier(evaluate, agents, notes, raw_texts)):
        if ev is None:
            flags.append(f"agent-failed:{agent.name}:evaluate")
        else:
            current[agent.name] = ev
    if not current:
        raise BaselineFailure(case, "every committee agent failed to evaluate")
    initial = dict(current)

    history: list[DebateRound] = []
    for r in range(rounds):
        rnd = DebateRound()
        active = [a for a in agents if a.name in current]

        def debate(agent: AgentBlueprint, notes: list[str], raw: list[str]) -> tuple[list[PeerFeedback], str] | None:
            peers = {n: ev.to_dict() for n, ev in current.items() if n != agent.name}
            if not peers:
                return None
            prompt = render_baseline_prompts(
                BaselineKind.DEBATE_DEBATE, {"pool": pool, "k": k, "agent": agent, "peers": peers}, t
            )
            leaks = audit_score_hiding(prompt.user_text)
            if leaks:
                raise AssertionError(f"peer scores leaked into debate prompt: {leaks}")
            try:
                obj = call(agent, BaselineKind.DEBATE_DEBATE, {"peers": peers}, 1 + 2 * r, raw)
            except GatewayError as exc:
                notes.append(f"{agent.name} debate failed: {type(exc).__name__}")
                return None
            fb, more = parse_feedback(agent.name, obj, list(peers))
            notes.extend(f"{agent.name}: {n}" for n in more)
            return fb, prompt.user_text

        for agent, out in zip(active, _barrier(debate, active, notes, raw_texts)):
            if out is None:
                flags.append(f"agent-failed:{agent.name}:debate:{r + 1}")
            else:
                rnd.feedback.extend(out[0])
                rnd.debate_prompts[agent.name] = out[1]

        def reflect(agent: AgentBlueprint, notes: list[str], raw: list[str]) -> tuple[Reflection, DebateEvaluation] | None:
            mine = current[agent.name]
            received = [f.to_dict() for f in rnd.feedback if f.target == agent.name]
            try:
                obj = call(
                    agent, BaselineKind.DEBATE_REFLECT,
                    {"evaluations": mine.to_dict(), "feedback": received}, 2 + 2 * r, raw,
                )
            except GatewayError as exc:
                notes.append(f"{agent.name} reflection failed: {type(exc).__name__}")
                return None
            decision = obj.get("score_decisions") or {}
            stick = _as_bool(decision.get("stick_with_previous_score"))
            if stick is None:
                notes.append(f"{agent.name}: stick decision {decision.get('stick_with_previous_score')!r} unreadable; kept scores")
                stick = True
            summary = str(obj.get("reflection_summary", ""))
            if stick:
                return Reflection(agent.name, True, False, summary), mine
            revised, more = parse_debate_evaluation(agent.name, obj.get("revised_evaluations"), pool)
            if not revised.firms:
                notes.append(f"{agent.name}: chose to revise without a usable evaluation; kept scores")
                return Reflection(agent.name, False, False, summary), mine
            notes.extend(f"{agent.name}: {n}" for n in more)
            return Reflection(agent.name, False, True, summary), revised

        nxt = dict(current)
        for agent, out in zip(active, _barrier(reflect, active, notes, raw_texts)):
            if out is None:
                flags.append(f"agent-failed:{agent.name}:reflect:{r + 1}")
                continue
            rnd.reflections.append(out[0])
            nxt[agent.name] = out[1]
        rnd.evaluations = nxt
        current = nxt
        history.append(rnd)

    final = _synthesize(pool, k, current, history, gateway, t, temperature, flags, notes, raw_texts)
    return DebateTranscript(agents, initial, history, final, flags, notes, raw_texts)


def _synthesize(pool, k, finals, history, gateway, t, temperature, flags, notes, raw_texts) -> RankedShortlist:
    summary = render_feedback(f.to_dict() for rnd in history for f in rnd.feedback)
    inputs = {
        "pool": pool,
        "k": k,
        "final_evaluations": {n: ev.to_dict() for n, ev in finals.items()},
        "debate_summary": summary,
    }
    fallback = fallback_synthesis(finals, pool, k)
    prompt = render_baseline_prompts(BaselineKind.DEBATE_SUPERVISOR, inputs, t)
    req = CompletionRequest(
        Role.DEBATE_SUPERVISOR, prompt.system_text, prompt.user_text, case_id=pool.case_id,
        agent_name=t.persona("debate_supervisor")["name"], temperature=temperature,
        payload={"kind": "debate-supervisor", **inputs},
    )
    try:
        obj, results = gateway.complete_structured(req, prompt.declared_shape)
        raw_texts.append(results[-1].text)
        order, more = extract_final_order(obj, pool, k)
        notes.extend(more)
    except GatewayError as exc:
        notes.append(f"debate supervisor failed: {type(exc).__name__}: {exc}")
        order = []
    if not order:
        flags.append("supervisor-fallback")
        return RankedShortlist("debate-supervisor", fallback.entries, ScoreScale.ONE_TO_FIVE)
    pad = [f for f in fallback.firm_ids if f not in order][: max(0, k - len(order))]
    if pad:
        flags.append("padded")
        order = [*order, *pad]
    means = {e.firm_id: e.score for e in fallback.entries}
    return RankedShortlist(
        "debate-supervisor",
        tuple(ShortlistEntry(f, i, means.get(f, 1.0)) for i, f in enumerate(order, 1)),
        ScoreScale.ONE_TO_FIVE,
    )
