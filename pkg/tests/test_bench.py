import json
import statistics

import pytest
from hypothesis import given, strategies as st

from conftest import record_fixtures, scripted_gateway, tiny_pool
from partnermas.bench import (
    ConfigError,
    ExperimentConfig,
    ProviderBinding,
    UndefinedMetricError,
    build_gateway,
    cases_csv,
    confidence_interval,
    match_rate,
    pareto_front,
    read_runlog,
    run_bench,
    shuffle_pool,
    write_outputs,
)
from partnermas.gateway import CallableProvider, Gateway, dump_fixtures
from partnermas.oracle import RuleProvider
from partnermas.pipeline import CaseFailure, PipelineConfig, run_partner_mas


def test_match_rate_and_undefined_truth():
    assert match_rate(["a", "b", "x"], {"a", "b", "c", "d"}) == 50.0
    with pytest.raises(UndefinedMetricError):
        match_rate(["a"], set())


def test_confidence_interval():
    assert confidence_interval([0.0, 100.0]) == pytest.approx(98.0, abs=0.01)
    assert confidence_interval([50.0]) is None
    assert confidence_interval([40.0] * 5) == 0.0


@given(st.lists(st.floats(0, 100), min_size=2, max_size=50))
def test_ci_matches_normal_formula(rates):
    expected = 1.96 * statistics.stdev(rates) / len(rates) ** 0.5
    assert confidence_interval(rates) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_pareto_front():
    pts = {"cheap": (100, 50.0), "best": (900, 80.0), "dominated": (500, 40.0), "mid": (400, 60.0)}
    assert pareto_front(pts) == ["cheap", "mid", "best"]


def test_nine_scored_one_failed(synthetic10, tmp_path):
    cfg = ExperimentConfig()
    fixtures = record_fixtures(synthetic10, cfg)
    broken = synthetic10[4].case_id
    fixtures = {k: v for k, v in fixtures.items() if not (k[0] == broken and k[1] == "planner")}
    report = run_bench(synthetic10, cfg, scripted_gateway(fixtures))
    assert len(report.scored) == 9 and len(report.failed) == 1
    assert report.status == "partial" and report.exit_code == 2
    assert report.mean == 100.0
    body = report.body()
    assert body["failed_cases"][0]["case_id"] == broken
    assert body["failed_cases"][0]["stage"] == "planner"
    paths = write_outputs(report, tmp_path)
    assert len(read_runlog(paths["runlog"])) == 10
    assert json.loads(paths["report"].read_text())["schema_version"] == 1
    assert cases_csv(report).count("failed") == 1


def test_every_case_failing_is_a_bench_failure(synthetic10):
    report = run_bench(synthetic10[:2], ExperimentConfig(), Gateway(CallableProvider(lambda r: "nonsense")))
    assert report.status == "bench-failure" and report.exit_code == 1
    assert report.mean is None


def test_shuffle_is_seeded_per_case():
    pool = tiny_pool(12)
    a, b = shuffle_pool(pool, 5), shuffle_pool(pool, 5)
    assert a.firm_ids == b.firm_ids != pool.firm_ids
    assert sorted(a.firm_ids) == sorted(pool.firm_ids)
    assert shuffle_pool(pool, None) is pool


def test_shuffled_rule_run_still_recovers_truth(synthetic10):
    cfg = ExperimentConfig(shuffle_seed=3, providers={"default": ProviderBinding("rule")})
    report = run_bench(synthetic10, cfg)
    assert report.mean == 100.0


def test_baselines_under_the_bench(synthetic10):
    for system, calls in (("single", 1), ("debate", 10)):
        cfg = ExperimentConfig(system=system, providers={"default": {"kind": "rule"}})
        report = run_bench(synthetic10[:3], cfg)
        assert report.status == "ok"
        assert all(r.tokens["call_count"] == calls for r in report.results)
    single4 = run_bench(synthetic10[:2], ExperimentConfig(system="single", runs_k=4, providers={"default": {"kind": "rule"}}))
    assert all(r.tokens["call_count"] == 5 for r in single4.results)


@pytest.mark.parametrize("kwargs, key", [
    ({"runs_k": 0}, "runs_k"),
    ({"system": "solo"}, "system"),
    ({"consensus_threshold": 1.0}, "consensus_threshold"),
    ({"providers": {"oracle": {"kind": "rule"}}}, "providers.oracle"),
    ({"providers": {"default": {"kind": "http", "name": "x"}}}, "providers.default.name"),
    ({"providers": {"default": {"kind": "rule", "colour": 1}}}, "providers.default.colour"),
    ({"system": "debate", "providers": {"planner": {"kind": "rule"}}}, "providers.debate-agent"),
    ({"shuffle_seed": "abc"}, "shuffle_seed"),
])
def test_config_errors_name_the_key(kwargs, key):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(**kwargs)
    assert info.value.key == key


def test_config_hash_is_stable_and_sensitive():
    assert ExperimentConfig().config_hash() == ExperimentConfig().config_hash()
    assert ExperimentConfig().config_hash() != ExperimentConfig(variant="business").config_hash()
    assert len(ExperimentConfig().config_hash()) == 16


def test_build_gateway_shares_identical_bindings(tmp_path):
    dump_fixtures({}, tmp_path / "f.json")
    cfg = ExperimentConfig(providers={"default": {"fixtures": str(tmp_path / "f.json")},
                                      "planner": {"fixtures": str(tmp_path / "f.json")}})
    gw = build_gateway(cfg)
    assert gw.provider_for("planner") is gw.provider_for("specialist")
    with pytest.raises(ConfigError):
        build_gateway(ExperimentConfig())


def test_pipeline_flags_failed_specialists():
    pool = tiny_pool(9)
    rule = RuleProvider("signal")

    def reply(req):
        if req.agent_name == "Signal Analyst 2":
            return "unparseable"
        return rule.send(req).text

    out = run_partner_mas(pool, PipelineConfig(), Gateway(CallableProvider(reply)))
    assert "specialist-failed:Signal Analyst 2" in out.flags
    assert len(out.reports) == 2
    assert out.final.firm_ids == ("F1", "F2", "F3")


def test_pipeline_fails_when_no_specialist_survives():
    pool = tiny_pool(9)
    rule = RuleProvider("signal")
    gw = Gateway(CallableProvider(lambda r: rule.send(r).text if r.role.value == "planner" else "x"))
    with pytest.raises(CaseFailure) as info:
        run_partner_mas(pool, PipelineConfig(), gw)
    assert info.value.stage == "specialists"
