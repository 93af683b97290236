import pytest

from conftest import tiny_pool
from partnermas.domain import AgentBlueprint, FeatureValue, RankedShortlist
from partnermas.prompts import (
    BaselineKind,
    PromptVariant,
    SupervisorMode,
    TemplateError,
    TemplateSet,
    audit_score_hiding,
    format_value,
    render_baseline_prompts,
    render_planner_prompt,
    render_specialist_prompt,
    render_supervisor_prompt,
    residual_placeholders,
    strip_scores,
    substitute,
)
from partnermas.specialist import build_report

BP = AgentBlueprint("Network Analyst", "Network specialist", "reads tie strength", "prior co-investment ties")


def _reports(pool):
    obj = {
        "evaluation_focus": "ties",
        "overall_rationale": "strong ties",
        "ranked_candidates": [{"firm_id": f, "rank": i, "score": 9, "rationale": "tie"} for i, f in
                              enumerate(["F1", "F2", "F3"], start=1)],
    }
    return [build_report(BP, obj, pool, 3, "raw")]


def _all_prompts(pool, variant):
    reports = _reports(pool)
    out = [
        render_planner_prompt(pool.context, pool.feature_names, pool.candidates[:2], variant),
        render_specialist_prompt(BP, pool.context, pool, 3),
        render_baseline_prompts(BaselineKind.SINGLE, {"pool": pool, "k": 3, "variant": variant}),
        render_baseline_prompts(BaselineKind.DEBATE_EVAL, {"pool": pool, "k": 3, "agent": BP, "variant": variant}),
    ]
    for mode in (SupervisorMode.IMPORTANCE, SupervisorMode.WEIGHT_ASSIGN, SupervisorMode.MAJORITY):
        out.append(render_supervisor_prompt(mode, "guide", reports, 3, variant))
    out.append(render_supervisor_prompt(SupervisorMode.WEIGHT_SELECT, "g", reports, 3, variant,
                                        weights={"Network Analyst": 1.0}))
    return out


@pytest.mark.parametrize("variant", list(PromptVariant))
def test_every_template_renders_without_leftover_placeholders(variant):
    for prompt in _all_prompts(tiny_pool(), variant):
        assert residual_placeholders(prompt.system_text + prompt.user_text) == []


def test_variants_differ_only_by_the_hint_block():
    hint = TemplateSet.builtin().business_hint
    for g, b in zip(_all_prompts(tiny_pool(), "generic"), _all_prompts(tiny_pool(), "business")):
        assert g.system_text == b.system_text
        if g.user_text != b.user_text:
            assert b.user_text.replace(f"# Business Hint:\n{hint}\n\n", "") == g.user_text


def test_weight_assign_sees_roster_not_rankings():
    prompt = render_supervisor_prompt(SupervisorMode.WEIGHT_ASSIGN, "g", _reports(tiny_pool()), 3, "generic")
    assert "Network Analyst" in prompt.user_text
    assert "F1" not in prompt.user_text


def test_weight_select_requires_weights():
    with pytest.raises(ValueError):
        render_supervisor_prompt(SupervisorMode.WEIGHT_SELECT, "g", _reports(tiny_pool()), 3, "generic")


def test_substitute_rejects_unknown_placeholders():
    assert substitute("{a} and {b_c}", {"a": 1, "b_c": "x"}) == "1 and x"
    with pytest.raises(TemplateError):
        substitute("{missing}", {})
    with pytest.raises(TemplateError):
        TemplateSet.builtin().text("nope")


def test_format_value():
    assert format_value("degree", None) == "N/A"
    assert format_value("degree", FeatureValue.missing()) == "N/A"
    assert format_value("degree", FeatureValue.numeric(12.0)) == "12"
    assert format_value("uslat_vc", FeatureValue.numeric(37.77512)) == "37.775"
    assert format_value("boncent", FeatureValue.numeric(0.123456)) == "0.1235"
    assert format_value("note", FeatureValue.text("a \n  b")) == "a b"


def test_score_audit_and_stripping():
    evals = {"F1": {"integrity_score": 4, "integrity_rationale": "clean record", "fit_score": 2}}
    assert strip_scores(evals) == {"F1": {"integrity_rationale": "clean record"}}
    assert audit_score_hiding("integrity_score=4") != []
    assert audit_score_hiding('"score": 3') != []
    assert audit_score_hiding("strong record over 20 deals") == []


def test_debate_phase_prompt_hides_peer_scores():
    pool = tiny_pool()
    peers = {"Peer": {"F1": {"integrity_score": 5, "integrity_rationale": "solid", "capability_score": 4,
                             "capability_rationale": "able", "fit_score": 3, "fit_rationale": "ok"}}}
    prompt = render_baseline_prompts(BaselineKind.DEBATE_DEBATE, {"pool": pool, "k": 3, "agent": BP, "peers": peers})
    assert "solid" in prompt.user_text
    assert audit_score_hiding(prompt.system_text + prompt.user_text) == []


def test_single_reflect_numbers_lists():
    pool = tiny_pool()
    lists = [RankedShortlist.from_ranked("a", [("F1", 5)]), RankedShortlist.from_ranked("b", [("F2", 4)])]
    prompt = render_baseline_prompts(BaselineKind.SINGLE_REFLECT, {"pool": pool, "k": 3, "shortlists": lists})
    assert "## List 1" in prompt.user_text and "## List 2" in prompt.user_text


def test_committee_has_three_named_agents():
    names = [a.name for a in TemplateSet.builtin().committee()]
    assert len(names) == len(set(names)) == 3
