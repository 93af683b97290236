from __future__ import annotations

import pytest

from partnermas.domain import CandidateRecord, CasePool, FeatureKind, FeatureValue, TaskContext
from partnermas.gateway import Gateway, RecordingProvider, ScriptedProvider
from partnermas.ingest import SyntheticSpec, generate_synthetic
from partnermas.oracle import RuleProvider

SCHEMA = (("signal", FeatureKind.NUMERIC), ("note", FeatureKind.TEXT))


def tiny_pool(m: int = 9, truth: tuple[str, ...] = ("F1", "F2"), case_id: str = "T1") -> CasePool:
    """m firms F1..Fm; `signal` decreases with the index, so F1 ranks first."""
    ctx = TaskContext(
        case_id,
        {"leadvc": FeatureValue.identifier("LEAD")},
        {"companyindustry": FeatureValue.categorical("Software")},
        "2020Q1",
    )
    cands = [
        CandidateRecord(
            f"F{i}",
            {"signal": FeatureValue.numeric(float(m - i)), "note": FeatureValue.text(f"firm {i}")},
            f"F{i}" in truth,
        )
        for i in range(1, m + 1)
    ]
    return CasePool(ctx, tuple(cands), SCHEMA)


@pytest.fixture
def pool() -> CasePool:
    return tiny_pool()


@pytest.fixture(scope="session")
def synthetic10() -> list[CasePool]:
    return generate_synthetic(SyntheticSpec(num_cases=10, seed=7, planted_feature="pair_tie_strength"))


def record_fixtures(pools, cfg):
    """Run the rule oracle once and return the replies as scripted fixtures."""
    from partnermas.bench import run_bench

    recorder = RecordingProvider(RuleProvider("pair_tie_strength", 3))
    run_bench(pools, cfg, Gateway(recorder))
    return dict(recorder.recorded)


def scripted_gateway(fixtures) -> Gateway:
    return Gateway(ScriptedProvider(fixtures))


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
