"""Benchmark runner: execute a system over many cases and score it.

Outputs of one run, all under the chosen directory:

``bench_report.json``
    ``{"schema_version", "body": {...}, "metadata": {...}}``. ``body`` is fully
    deterministic for scripted providers; wall-clock timestamps live only in
    ``metadata``.
``cases.csv``
    one row per case: case_id, status, failure stage, matched, truth_size,
    k, match_rate, prompt/completion/total tokens, calls, flags.
``runlog.jsonl``
    one JSON object per case with planner output, specialist reports,
    supervisor trace (or baseline transcript) and the raw completions.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import random
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from partnermas.baselines import BaselineFailure, SingleAgentConfig, run_debate, run_single
from partnermas.domain import CasePool, RankedShortlist, final_shortlist_size
from partnermas.gateway import (
    Gateway,
    HTTPChatProvider,
    RetryPolicy,
    Role,
    ScriptedProvider,
)
from partnermas.oracle import RuleProvider
from partnermas.pipeline import CaseFailure, PipelineConfig, run_partner_mas
from partnermas.prompts import TEMPLATE_VERSION, PromptVariant
from partnermas.supervisor import AggregationMode

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
Z_95 = 1.96


class System(str, Enum):
    PARTNER_MAS = "partner-mas"
    SINGLE = "single"
    DEBATE = "debate"


SYSTEM_ROLES: dict[System, tuple[Role, ...]] = {
    System.PARTNER_MAS: (Role.PLANNER, Role.SPECIALIST, Role.SUPERVISOR),
    System.SINGLE: (Role.SINGLE,),
    System.DEBATE: (Role.DEBATE_AGENT, Role.DEBATE_SUPERVISOR),
}


class UndefinedMetricError(ValueError):
    pass


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` is the dotted path at fault."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


@dataclass(frozen=True)
class ProviderBinding:
    """How one role reaches a model.

    ``kind`` is ``scripted`` (replay ``fixtures``), ``rule`` (the in-process
    rule oracle ranking on ``feature``) or ``http`` (an OpenAI-compatible
    endpoint named ``name``; endpoint and key come from the environment).
    """

    kind: str = "scripted"
    name: str = ""
    model: str = ""
    fixtures: str | None = None
    feature: str = "pair_tie_strength"
    options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("scripted", "rule", "http"):
            raise ConfigError("kind", f"unknown provider kind {self.kind!r}")
        if self.kind == "http" and not (self.name and self.model):
            raise ConfigError("name", "http providers need both 'name' and 'model'")


@dataclass(frozen=True)
class ExperimentConfig:
    system: System = System.PARTNER_MAS
    providers: Mapping[str, ProviderBinding] = field(
        default_factory=lambda: {"default": ProviderBinding("scripted")}
    )
    variant: PromptVariant = PromptVariant.GENERIC
    supervisor_mode: AggregationMode = AggregationMode.DETERMINISTIC
    runs_k: int = 1
    debate_rounds: int = 1
    shuffle_seed: int | None = None
    sample_seed: int | None = None
    concurrency: int = 4
    blueprint_cap: int = 10
    consensus_threshold: float = 0.5
    temperature: float = 0.0
    max_attempts: int = 3

    def __post_init__(self) -> None:
        for name, enum in (("system", System), ("variant", PromptVariant), ("supervisor_mode", AggregationMode)):
            try:
                object.__setattr__(self, name, enum(getattr(self, name)))
            except ValueError:
                choices = ", ".join(e.value for e in enum)
                raise ConfigError(name, f"{getattr(self, name)!r} is not one of {choices}") from None
        for name in ("runs_k", "debate_rounds", "concurrency", "blueprint_cap", "max_attempts"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(name, f"must be a positive integer, got {value!r}")
        for name in ("shuffle_seed", "sample_seed"):
            value = getattr(self, name)
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(name, f"must be an integer or null, got {value!r}")
        if not 0 <= self.consensus_threshold < 1:
            raise ConfigError("consensus_threshold", "must lie in [0, 1)")
        bindings = {}
        for role, b in dict(self.providers).items():
            if role != "default" and role not in {r.value for r in Role}:
                raise ConfigError(f"providers.{role}", "unknown role")
            if isinstance(b, ProviderBinding):
                bindings[role] = b
                continue
            if not isinstance(b, Mapping):
                raise ConfigError(f"providers.{role}", "must be a mapping")
            unknown = set(b) - {f.name for f in dataclasses.fields(ProviderBinding)}
            if unknown:
                raise ConfigError(f"providers.{role}.{sorted(unknown)[0]}", "unknown provider field")
            try:
                bindings[role] = ProviderBinding(**b)
            except ConfigError as exc:
                raise ConfigError(f"providers.{role}.{exc.key}", exc.message) from None
        object.__setattr__(self, "providers", dict(sorted(bindings.items())))
        for role in SYSTEM_ROLES[self.system]:
            if role.value not in self.providers and "default" not in self.providers:
                raise ConfigError(f"providers.{role.value}", f"no binding for a role {self.system.value} uses")

    def binding(self, role: Role) -> ProviderBinding:
        return self.providers.get(role.value) or self.providers["default"]

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Enum):
                v = v.value
            elif f.name == "providers":
                v = {r: {**dataclasses.asdict(b), "options": dict(b.options)} for r, b in v.items()}
            out[f.name] = v
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            variant=self.variant,
            supervisor_mode=self.supervisor_mode,
            blueprint_cap=self.blueprint_cap,
            sample_seed=self.sample_seed,
            consensus_threshold=self.consensus_threshold,
            temperature=self.temperature,
        )


def build_gateway(cfg: ExperimentConfig, *, fixtures_override: str | Path | None = None, sleep: Any = None) -> Gateway:
    """Instantiate one provider per distinct binding and route roles to them."""
    cache: dict[ProviderBinding | tuple, Any] = {}

    def make(b: ProviderBinding) -> Any:
        key = (b.kind, b.name, b.model, b.fixtures, b.feature, tuple(sorted(b.options.items())))
        if key in cache:
            return cache[key]
        if b.kind == "scripted":
            path = fixtures_override or b.fixtures
            if not path:
                raise ConfigError("providers.fixtures", "scripted provider needs a fixture file")
            provider = ScriptedProvider.load(path)
        elif b.kind == "rule":
            provider = RuleProvider(b.feature, int(b.options.get("n_specialists", 3)))
        else:
            provider = HTTPChatProvider(b.name, b.model, options=dict(b.options))
        cache[key] = provider
        return provider

    providers = {role: make(b) for role, b in cfg.providers.items()}
    kwargs: dict[str, Any] = {"retry": RetryPolicy(max_attempts=cfg.max_attempts)}
    if sleep is not None:
        kwargs["sleep"] = sleep
    return Gateway(providers, **kwargs)


# -- metrics ------------------------------------------------------------------


def match_rate(final: RankedShortlist | Iterable[str], truth: Iterable[str]) -> float:
    """Percentage of the ground-truth syndicate present in ``final``."""
    truth = set(truth)
    if not truth:
        raise UndefinedMetricError("match rate is undefined for an empty ground truth")
    firms = set(final.firm_ids if isinstance(final, RankedShortlist) else final)
    return 100.0 * len(firms & truth) / len(truth)


def confidence_interval(rates: Sequence[float]) -> float | None:
    """Half-width of the normal-approximation 95% interval of the mean; None below two rates."""
    if len(rates) < 2:
        return None
    return Z_95 * statistics.stdev(rates) / math.sqrt(len(rates))


def pareto_front(points: Mapping[str, tuple[float, float]]) -> list[str]:
    """Labels whose (tokens, match_rate) point no other point dominates, cheapest first.

    Fewer tokens and a higher match rate are both better.
    """
    front = []
    for label, (tok, rate) in points.items():
        dominated = any(
            (t2 <= tok and r2 >= rate) and (t2 < tok or r2 > rate)
            for other, (t2, r2) in points.items()
            if other != label
        )
        if not dominated:
            front.append(label)
    return sorted(front, key=lambda lbl: (points[lbl][0], -points[lbl][1], lbl))


# -- per-case execution ---------------------------------------------------------


@dataclass
class CaseResult:
    case_id: str
    system: str
    k: int
    truth_size: int
    final: RankedShortlist | None = None
    matched: int = 0
    match_rate: float | None = None
    tokens: dict[str, int] = field(default_factory=dict)
    tokens_by_role: dict[str, dict[str, int]] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    failure: dict[str, str] | None = None
    record: dict[str, Any] = field(default_factory=dict)

    @property
    def scored(self) -> bool:
        return self.failure is None and self.match_rate is not None

    def summary(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "status": "scored" if self.scored else "failed",
            "k": self.k,
            "truth_size": self.truth_size,
            "matched": self.matched,
            "match_rate": self.match_rate,
            "final": list(self.final.firm_ids) if self.final else None,
            "tokens": self.tokens,
            "tokens_by_role": self.tokens_by_role,
            "flags": self.flags,
            "failure": self.failure,
        }


def shuffle_pool(pool: CasePool, seed: int | None) -> CasePool:
    """Candidate rows in file order, or permuted by a per-case seeded RNG."""
    if seed is None:
        return pool
    rng = random.Random(f"{seed}:{pool.case_id}")
    rows = list(pool.candidates)
    rng.shuffle(rows)
    return dataclasses.replace(pool, candidates=tuple(rows))


def run_case(pool: CasePool, cfg: ExperimentConfig, gateway: Gateway) -> CaseResult:
    pool = shuffle_pool(pool, cfg.shuffle_seed)
    result = CaseResult(pool.case_id, cfg.system.value, final_shortlist_size(pool.m), len(pool.ground_truth))
    try:
        if cfg.system is System.PARTNER_MAS:
            out = run_partner_mas(pool, cfg.pipeline(), gateway)
            final, result.flags, result.record = out.final, list(out.flags), out.to_dict()
        elif cfg.system is System.SINGLE:
            single = run_single(pool, SingleAgentConfig(cfg.runs_k, cfg.variant, cfg.temperature), gateway)
            final, result.flags, result.record = single.final, list(single.flags), single.to_dict()
        else:
            transcript = run_debate(pool, cfg.variant, gateway, rounds=cfg.debate_rounds, temperature=cfg.temperature)
            final, result.flags, result.record = transcript.final, list(transcript.flags), transcript.to_dict()
    except CaseFailure as exc:
        result.failure = {"stage": exc.stage, "reason": exc.reason}
        result.record = exc.record
        return _with_tokens(result, gateway)
    except BaselineFailure as exc:
        result.failure = {"stage": cfg.system.value, "reason": exc.reason}
        return _with_tokens(result, gateway)

    result.final = final
    try:
        result.match_rate = match_rate(final, pool.ground_truth)
        result.matched = len(set(final.firm_ids) & pool.ground_truth)
    except UndefinedMetricError as exc:
        result.failure = {"stage": "metric", "reason": str(exc)}
    return _with_tokens(result, gateway)


def _with_tokens(result: CaseResult, gateway: Gateway) -> CaseResult:
    result.tokens = gateway.ledger.totals(result.case_id)
    result.tokens_by_role = gateway.ledger.by_role(result.case_id)
    return result


# -- the benchmark ----------------------------------------------------------------


@dataclass
class BenchReport:
    cfg: ExperimentConfig
    results: list[CaseResult]
    totals: dict[str, int]
    tokens_by_role: dict[str, dict[str, int]]
    providers: list[str]
    started: str = ""
    finished: str = ""
    transcript: list[dict[str, Any]] = field(default_factory=list)

    @property
    def scored(self) -> list[CaseResult]:
        return [r for r in self.results if r.scored]

    @property
    def failed(self) -> list[CaseResult]:
        return [r for r in self.results if not r.scored]

    @property
    def rates(self) -> list[float]:
        return [r.match_rate for r in self.scored]  # type: ignore[misc]

    @property
    def mean(self) -> float | None:
        return math.fsum(self.rates) / len(self.rates) if self.rates else None

    @property
    def ci(self) -> float | None:
        return confidence_interval(self.rates)

    @property
    def status(self) -> str:
        if not self.scored:
            return "bench-failure"
        return "partial" if self.failed else "ok"

    @property
    def exit_code(self) -> int:
        return {"ok": 0, "partial": 2, "bench-failure": 1}[self.status]

    def body(self) -> dict[str, Any]:
        scored = self.scored
        matched = sum(r.matched for r in scored)
        truth = sum(r.truth_size for r in scored)
        mean = self.mean
        return {
            "system": self.cfg.system.value,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.config_hash(),
            "template_version": TEMPLATE_VERSION,
            "status": self.status,
            "cases_total": len(self.results),
            "cases_scored": len(scored),
            "failed_cases": [{"case_id": r.case_id, **(r.failure or {})} for r in self.failed],
            "mean_match_rate": mean,
            "ci95_half_width": self.ci,
            "pooled": {"matched": matched, "truth": truth, "match_rate": 100.0 * matched / truth if truth else None},
            "tokens": self.totals,
            "tokens_by_role": self.tokens_by_role,
            "providers": self.providers,
            "mixed_providers": len(self.providers) > 1,
            "cost_accuracy": {"total_tokens": self.totals.get("total_tokens", 0), "match_rate": mean},
            "cases": [r.summary() for r in self.results],
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "body": self.body(),
            "metadata": {"started": self.started, "finished": self.finished},
        }

    def summary_line(self) -> str:
        mean = "n/a" if self.mean is None else f"{self.mean:.2f}%"
        ci = "" if self.ci is None else f" ± {self.ci:.2f}"
        return (
            f"{self.cfg.system.value}: {len(self.scored)}/{len(self.results)} cases scored, "
            f"mean match rate {mean}{ci}, {self.totals.get('total_tokens', 0)} tokens, "
            f"{len(self.failed)} failed"
        )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_bench(
    cases: Sequence[CasePool],
    cfg: ExperimentConfig,
    gateway: Gateway | None = None,
) -> BenchReport:
    """Run every case under the concurrency cap; results keep the input order."""
    if not cases:
        raise ValueError("run_bench needs at least one case")
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ValueError("case ids must be unique within a bench run")
    gateway = gateway or build_gateway(cfg)
    started = _now()
    with ThreadPoolExecutor(max_workers=cfg.concurrency) as ex:
        results = list(ex.map(lambda p: run_case(p, cfg, gateway), cases))
    for r in results:
        if r.failure:
            log.warning("case %s failed at %s: %s", r.case_id, r.failure["stage"], r.failure["reason"])
    transcript = sorted(
        (
            {
                "case_id": key[0], "role": key[1], "agent": key[2], "turn": key[3], "repair": key[4],
                "prompt_tokens": res.prompt_tokens, "completion_tokens": res.completion_tokens,
                "provider": res.provider_id, "attempts": res.attempt_count, "text": res.text,
            }
            for key, res in list(gateway.transcript)
        ),
        key=lambda d: (d["case_id"], d["role"], d["agent"], d["turn"], d["repair"]),
    )
    return BenchReport(
        cfg,
        results,
        gateway.ledger.totals(),
        gateway.ledger.by_role(),
        sorted(gateway.ledger.providers()),
        started,
        _now(),
        transcript,
    )


# -- output files -----------------------------------------------------------------

CASES_COLUMNS = (
    "case_id", "status", "failure_stage", "k", "truth_size", "matched", "match_rate",
    "prompt_tokens", "completion_tokens", "total_tokens", "calls", "flags",
)


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def cases_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CASES_COLUMNS)
    for r in report.results:
        w.writerow([
            r.case_id,
            "scored" if r.scored else "failed",
            (r.failure or {}).get("stage", ""),
            r.k,
            r.truth_size,
            r.matched,
            "" if r.match_rate is None else repr(r.match_rate),
            r.tokens.get("prompt_tokens", 0),
            r.tokens.get("completion_tokens", 0),
            r.tokens.get("total_tokens", 0),
            r.tokens.get("call_count", 0),
            ";".join(r.flags),
        ])
    return buf.getvalue()


def runlog_lines(report: BenchReport) -> str:
    by_case: dict[str, list[dict[str, Any]]] = {}
    for t in report.transcript:
        by_case.setdefault(t["case_id"], []).append({k: v for k, v in t.items() if k != "case_id"})
    lines = [
        json.dumps(
            {
                "case_id": r.case_id,
                "system": r.system,
                "template_version": TEMPLATE_VERSION,
                "result": r.summary(),
                "record": r.record,
                "completions": by_case.get(r.case_id, []),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        for r in report.results
    ]
    return "\n".join(lines) + "\n"


def write_outputs(report: BenchReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "bench_report.json",
        "cases": out / "cases.csv",
        "runlog": out / "runlog.jsonl",
    }
    paths["report"].write_text(dumps_json(report.to_dict()), encoding="utf-8")
    paths["cases"].write_text(cases_csv(report), encoding="utf-8")
    paths["runlog"].write_text(runlog_lines(report), encoding="utf-8")
    return paths


def read_runlog(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
