import json

from hypothesis import given, settings, strategies as st

from conftest import tiny_pool
from partnermas.domain import AgentBlueprint, validate_shortlist
from partnermas.gateway import CallableProvider, Gateway
from partnermas.specialist import (
    RawEntry,
    build_report,
    evaluate_all,
    match_focus_features,
    normalize_entries,
    parse_ranked_candidates,
    renormalize,
)

BP = AgentBlueprint("Tie Analyst", "network", "reads ties", "tie strength")


def _obj(items):
    return {"evaluation_focus": "signal", "overall_rationale": "r", "ranked_candidates": items}


def test_fourteen_entries_with_unknown_and_duplicate_become_twelve():
    pool = tiny_pool(36)
    items = [{"firm_id": f"F{i}", "rank": i, "score": 8} for i in range(1, 13)]
    items.insert(3, {"firm_id": "GHOST", "rank": 4, "score": 9})
    items.append({"firm_id": "F2", "rank": 14, "score": 7})
    assert len(items) == 14
    report = build_report(BP, _obj(items), pool, 12)
    assert len(report.shortlist) == 12
    assert report.normalized and not report.short
    assert "unknown-firm:GHOST" in report.violations
    assert "duplicate-firm:F2" in report.violations
    assert validate_shortlist(report.shortlist, pool, 12).ok


def test_out_of_range_score_is_clamped():
    pool = tiny_pool(9)
    report = build_report(BP, _obj([{"firm_id": "F1", "rank": 1, "score": 11}]), pool, 3)
    assert report.shortlist.entries[0].score == 10.0
    assert report.short
    assert any(v.startswith("score-out-of-range:F1") for v in report.violations)


def test_missing_rank_uses_position_and_missing_score_uses_floor():
    raw = parse_ranked_candidates(["F3", {"id": "F1", "score": "7/10"}, {"vcfirmid": "F2", "rank": 1}])
    entries, _, violations = normalize_entries(raw, {"F1", "F2", "F3"}, 3)
    assert [e.firm_id for e in entries] == ["F3", "F2", "F1"]
    assert [e.score for e in entries] == [1.0, 1.0, 7.0]
    assert "missing-score:F3" in violations


def test_parse_ignores_junk_and_null_aliases():
    raw = parse_ranked_candidates([{"firm_id": None, "id": "F4", "score": None, "alignment_score": 6}, 5, {"rank": 1}])
    assert raw == [RawEntry("F4", None, 6.0, "")]
    assert parse_ranked_candidates("nope") == []


entry = st.builds(
    RawEntry,
    st.sampled_from([f"F{i}" for i in range(1, 13)] + ["X", "Y"]),
    st.one_of(st.none(), st.integers(-2, 20)),
    st.one_of(st.none(), st.floats(-5, 20, allow_nan=False)),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(entry, max_size=20), st.integers(1, 6))
def test_normalization_is_valid_and_idempotent(raw, kp):
    pool = tiny_pool(12)
    obj = _obj([{"firm_id": e.firm_id, "rank": e.rank, "score": e.score} for e in raw])
    report = build_report(BP, obj, pool, kp)
    lst = report.shortlist
    assert len(lst) <= kp
    assert validate_shortlist(lst, pool, len(lst)).ok
    again = renormalize(report, pool)
    assert again.shortlist == lst
    assert again.violations == report.violations


def test_focus_features_are_matched_loosely():
    names = ["pair_tie_strength", "degree", "boncent"]
    assert match_focus_features("Pair tie strength and Degree", names) == ("pair_tie_strength", "degree")
    assert match_focus_features("geography", names) == ()


def test_evaluate_all_keeps_blueprint_order_and_collects_failures():
    pool = tiny_pool(9)
    bps = [AgentBlueprint(f"A{i}", "r", "a", "p") for i in range(5)]

    def reply(req):
        if req.agent_name == "A2":
            return "garbage"
        return json.dumps(_obj([{"firm_id": "F1", "rank": 1, "score": 9}]))

    rnd = evaluate_all(bps, pool.context, pool, "generic", Gateway(CallableProvider(reply)), max_workers=3)
    assert [r.name for r in rnd.reports] == ["A0", "A1", "A3", "A4"]
    assert [f.agent for f in rnd.failures] == ["A2"]
    assert rnd.failures[0].reason == "parse-failure"
