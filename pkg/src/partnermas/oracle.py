"""A rule-based in-process provider.

``RuleProvider`` answers every role by ranking candidates on one numeric
feature, reading the structured inputs carried in ``CompletionRequest.payload``
instead of the prompt text. On pools built by ``generate_synthetic`` with a
planted feature it recovers the ground truth exactly, which makes it useful
both as an end-to-end oracle and as a fixture generator (wrap it in a
``RecordingProvider``).
"""

from __future__ import annotations

import json
from typing import Any, Sequence

from partnermas.domain import CasePool, RankedShortlist
from partnermas.gateway import CompletionRequest, ProviderError, ProviderReply, Role
from partnermas.supervisor import aggregate_deterministic

AXES = ("integrity", "capability", "fit")


class RuleProvider:
    provider_id = "rule-oracle"

    def __init__(self, feature: str = "pair_tie_strength", n_specialists: int = 3) -> None:
        if n_specialists < 1:
            raise ValueError("n_specialists must be positive")
        self.feature = feature
        self.n_specialists = n_specialists

    def ranking(self, pool: CasePool) -> list[str]:
        """Firms by the planted feature, highest first; missing values last, ties by firm id."""

        def key(c: Any) -> tuple[int, float, str]:
            fv = c.get(self.feature)
            if fv is None or fv.is_missing or not isinstance(fv.value, float):
                return (1, 0.0, c.firm_id)
            return (0, -fv.value, c.firm_id)

        return [c.firm_id for c in sorted(pool.candidates, key=key)]

    def send(self, request: CompletionRequest) -> ProviderReply:
        p = request.payload
        role = Role(request.role)
        if role is Role.PLANNER:
            obj = self._planner()
        elif role is Role.SPECIALIST:
            obj = self._ranked(p["pool"], p["k_prime"], 10.0, "ranked_candidates")
            obj = {"evaluation_focus": f"{self.feature}", "overall_rationale": "ranked by the focus feature", **obj}
        elif role is Role.SUPERVISOR:
            obj = self._supervisor(p)
        elif role is Role.SINGLE:
            if p.get("kind") == "single-reflect":
                obj = {"selected_list": 1, "reasoning": "the first list is as reliable as any"}
            else:
                obj = self._ranked(p["pool"], p["k"], 5.0, "ranked_candidates")
        elif role is Role.DEBATE_AGENT:
            obj = self._debate(p)
        elif role is Role.DEBATE_SUPERVISOR:
            obj = self._ranked(p["pool"], p["k"], 5.0, "final_shortlist")
        else:
            raise ProviderError(f"rule oracle has no answer for role {role.value}")
        return ProviderReply(json.dumps(obj, ensure_ascii=False))

    def _planner(self) -> dict[str, Any]:
        agents = [
            {
                "name": f"{self.feature.title()} Analyst {i}",
                "role": f"specialist weighing {self.feature}",
                "ability": f"reads the {self.feature} column",
                "profile": f"Ranks candidates by {self.feature}, highest first.",
            }
            for i in range(1, self.n_specialists + 1)
        ]
        return {"strategic_guidance": f"Prioritise candidates with high {self.feature}.", "agents": agents}

    def _ranked(self, pool: CasePool, n: int, top: float, key: str) -> dict[str, Any]:
        order = self.ranking(pool)[:n]
        span = max(1, len(order) - 1)
        items = [
            {"firm_id": f, "rank": r, "score": round(top - (top - 1) * (r - 1) / span, 4), "rationale": "ordered by rule"}
            for r, f in enumerate(order, start=1)
        ]
        return {key: items}

    def _supervisor(self, p: dict[str, Any]) -> dict[str, Any]:
        reports = p["reports"]
        names = [r.name for r in reports]
        if p.get("mode") == "weight-assign":
            return {"weights": {n: 1 / len(names) for n in names}, "rationale": "equal weights"}
        lists: Sequence[RankedShortlist] = [r.shortlist for r in reports]
        trace = aggregate_deterministic(lists, None, p["k"])
        out: dict[str, Any] = {
            "rationale": f"{len(trace.consensus_picks)} consensus picks",
            "final_shortlist": [{"firm_id": f, "rank": i, "rationale": "aggregated"}
                                for i, f in enumerate(trace.final.firm_ids, start=1)],
        }
        if p.get("mode") == "importance":
            out = {"agent_importance_ranking": names, "consensus_count": len(trace.consensus_picks), **out}
        return out

    def _debate(self, p: dict[str, Any]) -> dict[str, Any]:
        kind = p["kind"]
        if kind == "debate-eval":
            pool: CasePool = p["pool"]
            order = self.ranking(pool)
            evaluations = {}
            for pos, firm in enumerate(order):
                level = 5 - (5 * pos) // len(order)
                body: dict[str, Any] = {}
                for axis in AXES:
                    body[f"{axis}_score"] = level
                    body[f"{axis}_rationale"] = f"{axis} judged from {self.feature}"
                evaluations[firm] = body
            return {"evaluations": evaluations}
        if kind == "debate-debate":
            return {
                "agree": [{"agent_name": n, "points": ["the reasoning follows the data"]} for n in p["peers"]],
                "disagree": [],
                "questions": [],
            }
        if kind == "debate-reflect":
            return {
                "reflection_summary": "peers agree; no change",
                "improvement_suggestions": [],
                "score_decisions": {"reasoning": "evaluation holds", "stick_with_previous_score": True},
            }
        raise ProviderError(f"rule oracle has no answer for debate step {kind!r}")
