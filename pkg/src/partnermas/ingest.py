"""Load benchmark cases from disk and generate synthetic fixture cases.

The canonical on-disk form is a UTF-8 comma-delimited table with one row per
(company, candidate firm) pair. Company-level columns repeat on every row of
a case; the lead VC's own row (``leadornot == 1``) feeds the lead profile and
is never a candidate.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from partnermas.domain import (
    CandidateRecord,
    CasePool,
    FeatureKind,
    FeatureValue,
    InvalidPoolError,
    TaskContext,
)

log = logging.getLogger(__name__)

# Column layout of the VC co-investment case file.
ID_COLUMNS = ("companyid", "vcfirmid", "leadvc")
LABEL_COLUMNS = ("real", "leadornot")
CONTEXT_COLUMNS = (
    "companyid",
    "leadvc",
    "yearquarter",
    "year",
    "realsize",
    "companyindustrymajorgroup",
    "companynation",
    "companystate",
    "companycity",
    "companyzip",
    "companylat",
    "companylng",
)
CANDIDATE_COLUMNS = (
    "firmtype",
    "firmnation",
    "firmstate",
    "firmcounty",
    "firmzipcode",
    "firmgeographypreference",
    "firmindustrypreference",
    "firminvestmentstagepreference",
    "vcfirm_dealcount_20qtr",
    "vcfirm_numcompinvest_20qtr",
    "vcfirmIPOcount_20qtr",
    "vcfirm_IPOcount_cum",
    "vcfirm_dealcount_cum",
    "vcfirm_numcompinvest_cum",
    "boncent",
    "degree",
    "pair_tie_strength",
    "uszip_vc",
    "uslat_vc",
    "uslng_vc",
    "uscity_vc",
    "uscounty_vc",
)

DEFAULT_KINDS: dict[str, FeatureKind] = {
    "companyid": FeatureKind.IDENTIFIER,
    "vcfirmid": FeatureKind.IDENTIFIER,
    "leadvc": FeatureKind.IDENTIFIER,
    "yearquarter": FeatureKind.CATEGORICAL,
    "year": FeatureKind.NUMERIC,
    "realsize": FeatureKind.NUMERIC,
    "companyindustrymajorgroup": FeatureKind.CATEGORICAL,
    "companynation": FeatureKind.CATEGORICAL,
    "companystate": FeatureKind.CATEGORICAL,
    "companycity": FeatureKind.CATEGORICAL,
    "companyzip": FeatureKind.CATEGORICAL,
    "companylat": FeatureKind.NUMERIC,
    "companylng": FeatureKind.NUMERIC,
    "firmtype": FeatureKind.CATEGORICAL,
    "firmnation": FeatureKind.CATEGORICAL,
    "firmstate": FeatureKind.CATEGORICAL,
    "firmcounty": FeatureKind.CATEGORICAL,
    "firmzipcode": FeatureKind.CATEGORICAL,
    "firmgeographypreference": FeatureKind.TEXT,
    "firmindustrypreference": FeatureKind.TEXT,
    "firminvestmentstagepreference": FeatureKind.TEXT,
    "vcfirm_dealcount_20qtr": FeatureKind.NUMERIC,
    "vcfirm_numcompinvest_20qtr": FeatureKind.NUMERIC,
    "vcfirmIPOcount_20qtr": FeatureKind.NUMERIC,
    "vcfirm_IPOcount_cum": FeatureKind.NUMERIC,
    "vcfirm_dealcount_cum": FeatureKind.NUMERIC,
    "vcfirm_numcompinvest_cum": FeatureKind.NUMERIC,
    "boncent": FeatureKind.NUMERIC,
    "degree": FeatureKind.NUMERIC,
    "pair_tie_strength": FeatureKind.NUMERIC,
    "uszip_vc": FeatureKind.CATEGORICAL,
    "uslat_vc": FeatureKind.NUMERIC,
    "uslng_vc": FeatureKind.NUMERIC,
    "uscity_vc": FeatureKind.CATEGORICAL,
    "uscounty_vc": FeatureKind.CATEGORICAL,
}

# Context fields that never appear inside the rendered profiles.
_CONTEXT_BOOKKEEPING = {"companyid", "realsize"}


class CaseFileError(ValueError):
    """A case file could not be parsed or violates a hard consistency rule."""

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None,
                 case_id: str | None = None) -> None:
        where = []
        if case_id is not None:
            where.append(f"case {case_id}")
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column
        self.case_id = case_id


@dataclass(frozen=True)
class CaseFile:
    path: Path
    format: str = "delimited-table"  # or "structured-records" (JSON lines)
    schema_manifest: Path | None = None

    @classmethod
    def infer(cls, path: str | Path, schema_manifest: str | Path | None = None) -> CaseFile:
        path = Path(path)
        fmt = "structured-records" if path.suffix.lower() in {".jsonl", ".ndjson"} else "delimited-table"
        return cls(path, fmt, Path(schema_manifest) if schema_manifest else None)


@dataclass
class LoadReport:
    skipped: list[tuple[str, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _kind_for(column: str, overrides: Mapping[str, FeatureKind]) -> FeatureKind:
    if column in overrides:
        return overrides[column]
    return DEFAULT_KINDS.get(column, FeatureKind.TEXT)


def _parse_cell(raw: Any, kind: FeatureKind, row: int, column: str) -> FeatureValue:
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        return FeatureValue.missing(kind)
    if kind is FeatureKind.NUMERIC:
        try:
            number = float(raw)
        except (TypeError, ValueError):
            raise CaseFileError(f"not a number: {raw!r}", row=row, column=column) from None
        if not math.isfinite(number):
            raise CaseFileError(f"non-finite number: {raw!r}", row=row, column=column)
        return FeatureValue.numeric(number)
    return FeatureValue(kind, str(raw))


def _parse_flag(raw: Any, row: int, column: str) -> bool:
    text = str(raw).strip() if raw is not None else ""
    if text in {"1", "1.0", "true", "True"}:
        return True
    if text in {"0", "0.0", "false", "False", ""}:
        return False
    raise CaseFileError(f"expected 0/1, got {raw!r}", row=row, column=column)


def _read_rows(file: CaseFile) -> tuple[list[str], Iterator[tuple[int, dict[str, Any]]]]:
    if file.format == "structured-records":
        records = []
        with open(file.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    records.append((lineno, json.loads(line)))
                except json.JSONDecodeError as exc:
                    raise CaseFileError(f"invalid JSON record: {exc.msg}", row=lineno) from None
        header: list[str] = []
        for _, rec in records:
            for key in rec:
                if key not in header:
                    header.append(key)
        return header, iter(records)
    if file.format != "delimited-table":
        raise CaseFileError(f"unknown case file format {file.format!r}")
    fh = open(file.path, encoding="utf-8", newline="")
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        fh.close()
        raise CaseFileError("missing header row")
    header = list(reader.fieldnames)

    def rows() -> Iterator[tuple[int, dict[str, Any]]]:
        try:
            for rec in reader:
                # DictReader stores surplus cells under the None key.
                if None in rec:
                    raise CaseFileError("row has more cells than the header", row=reader.line_num)
                yield reader.line_num, rec
        finally:
            fh.close()

    return header, rows()


def _load_manifest(path: Path | None) -> dict[str, FeatureKind]:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {name: FeatureKind(kind) for name, kind in data.get("columns", {}).items()}


def load_cases(file: CaseFile | str | Path, report: LoadReport | None = None) -> list[CasePool]:
    """Read a case file into one ``CasePool`` per distinct ``companyid``.

    Cases with fewer than three candidates are skipped and noted in
    ``report``; a ``realsize`` that disagrees with the ``real`` labels is a
    hard error.
    """
    if not isinstance(file, CaseFile):
        file = CaseFile.infer(file)
    report = report if report is not None else LoadReport()
    overrides = _load_manifest(file.schema_manifest)
    header, rows = _read_rows(file)
    for required in ("companyid", "vcfirmid", "real"):
        if required not in header:
            raise CaseFileError(f"required column {required!r} missing from header")

    context_cols = [c for c in header if c in CONTEXT_COLUMNS or c.startswith("company")]
    feature_cols = [c for c in header if c not in context_cols and c not in ("vcfirmid",) + LABEL_COLUMNS]
    schema = tuple((c, _kind_for(c, overrides)) for c in feature_cols)

    groups: dict[str, list[tuple[int, dict[str, Any]]]] = {}
    for row_no, rec in rows:
        cid = str(rec.get("companyid") or "").strip()
        if not cid:
            raise CaseFileError("empty companyid", row=row_no, column="companyid")
        groups.setdefault(cid, []).append((row_no, rec))

    pools: list[CasePool] = []
    for cid, group in groups.items():
        pool = _assemble_case(cid, group, context_cols, schema, overrides, report)
        if pool is not None:
            pools.append(pool)
    return pools


def _assemble_case(
    cid: str,
    group: list[tuple[int, dict[str, Any]]],
    context_cols: list[str],
    schema: tuple[tuple[str, FeatureKind], ...],
    overrides: Mapping[str, FeatureKind],
    report: LoadReport,
) -> CasePool | None:
    first_row, first = group[0]
    lead_id = str(first.get("leadvc") or "").strip()

    declared: int | None = None
    realsizes = set()
    for row_no, rec in group:
        raw = rec.get("realsize")
        if raw not in (None, ""):
            value = _parse_cell(raw, FeatureKind.NUMERIC, row_no, "realsize").value
            if value != int(value) or value < 0:
                raise CaseFileError(f"realsize must be a count, got {raw!r}", row=row_no, column="realsize")
            realsizes.add(int(value))
    if len(realsizes) > 1:
        raise CaseFileError(f"inconsistent realsize values {sorted(realsizes)}", case_id=cid)
    if realsizes:
        declared = realsizes.pop()

    target: dict[str, FeatureValue] = {}
    lead: dict[str, FeatureValue] = {}
    for col in context_cols:
        if col in _CONTEXT_BOOKKEEPING:
            continue
        value = _parse_cell(first.get(col), _kind_for(col, overrides), first_row, col)
        if col == "leadvc":
            lead[col] = value
        else:
            target[col] = value

    candidates: list[CandidateRecord] = []
    truth_rows = 0
    for row_no, rec in group:
        firm = str(rec.get("vcfirmid") or "").strip()
        if not firm:
            raise CaseFileError("empty vcfirmid", row=row_no, column="vcfirmid")
        is_real = _parse_flag(rec.get("real"), row_no, "real")
        is_lead = _parse_flag(rec.get("leadornot"), row_no, "leadornot") or (lead_id and firm == lead_id)
        features = {name: _parse_cell(rec.get(name), kind, row_no, name) for name, kind in schema}
        if is_lead:
            if is_real:
                raise CaseFileError("lead VC row is labelled real=1", row=row_no, column="real", case_id=cid)
            lead.setdefault("leadvc", FeatureValue.identifier(firm))
            lead.update(features)
            continue
        truth_rows += is_real
        candidates.append(CandidateRecord(firm, features, is_real))

    if declared is not None and declared != truth_rows:
        raise CaseFileError(f"realsize={declared} but {truth_rows} rows have real=1", case_id=cid)
    if len(candidates) < 3:
        msg = f"case {cid} skipped: {len(candidates)} candidates (< 3)"
        log.warning(msg)
        report.skipped.append((cid, msg))
        return None
    try:
        period = target.get("yearquarter") or target.get("year")
        period_label = "" if period is None or period.is_missing else _format_value(period)
        ctx = TaskContext(cid, lead, target, period_label)
        return CasePool(ctx, tuple(candidates), schema, declared)
    except InvalidPoolError as exc:
        raise CaseFileError(str(exc), case_id=cid) from None


def _format_value(value: FeatureValue) -> str:
    if value.is_missing:
        return ""
    if value.kind is FeatureKind.NUMERIC:
        number = float(value.value)  # type: ignore[arg-type]
        if number.is_integer() and abs(number) < 1e15:
            return str(int(number))
        return repr(number)
    return str(value.value)


def _case_rows(pool: CasePool) -> tuple[list[str], list[dict[str, str]]]:
    ctx = pool.context
    context_cols = ["companyid"] + [c for c in ctx.target_profile] + ["leadvc"]
    if pool.declared_real_size is not None:
        context_cols.append("realsize")
    header = context_cols + ["vcfirmid", "real", "leadornot"] + list(pool.feature_names)

    lead_vc = ctx.lead_profile.get("leadvc")
    base: dict[str, str] = {"companyid": ctx.company_id}
    for col, value in ctx.target_profile.items():
        base[col] = _format_value(value)
    base["leadvc"] = _format_value(lead_vc) if lead_vc is not None else ""
    if pool.declared_real_size is not None:
        base["realsize"] = str(pool.declared_real_size)

    rows: list[dict[str, str]] = []
    lead_features = {k: v for k, v in ctx.lead_profile.items() if k != "leadvc"}
    if lead_features and lead_vc is not None and not lead_vc.is_missing:
        row = dict(base, vcfirmid=str(lead_vc.value), real="0", leadornot="1")
        for name in pool.feature_names:
            value = lead_features.get(name)
            row[name] = _format_value(value) if value is not None else ""
        rows.append(row)
    for cand in pool.candidates:
        row = dict(base, vcfirmid=cand.firm_id, real="1" if cand.is_ground_truth else "0", leadornot="0")
        for name in pool.feature_names:
            row[name] = _format_value(cand.features[name])
        rows.append(row)
    return header, rows


def dumps_cases(pools: Iterable[CasePool]) -> str:
    """Serialize pools to the canonical delimited table.

    All pools must share one header layout (same target-profile columns and
    feature schema); that holds for anything produced by ``load_cases`` or
    ``generate_synthetic``.
    """
    header: list[str] | None = None
    all_rows: list[dict[str, str]] = []
    for pool in pools:
        case_header, rows = _case_rows(pool)
        if header is None:
            header = case_header
        elif case_header != header:
            raise ValueError(f"case {pool.case_id} has a different column layout")
        all_rows.extend(rows)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header or ["companyid", "vcfirmid", "real"], lineterminator="\n")
    writer.writeheader()
    writer.writerows(all_rows)
    return buf.getvalue()


def save_cases(pools: Iterable[CasePool], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_cases(pools), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Synthetic fixtures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the synthetic case generator.

    ``planted_feature`` names a numeric candidate column; when set, every
    ground-truth firm gets a strictly larger value of it than every other
    firm in its case, so ranking on that column alone recovers the truth.
    """

    num_cases: int = 10
    candidates_per_case: tuple[int, int] = (30, 40)
    ground_truth_per_case: tuple[int, int] = (2, 6)
    seed: int = 0
    planted_feature: str | None = None

    def __post_init__(self) -> None:
        lo, hi = self.candidates_per_case
        glo, ghi = self.ground_truth_per_case
        if lo < 3 or hi < lo:
            raise ValueError("candidates_per_case must satisfy 3 <= min <= max")
        if glo < 0 or ghi < glo:
            raise ValueError("ground_truth_per_case must satisfy 0 <= min <= max")
        if ghi >= lo:
            raise ValueError("ground_truth_per_case max must be below candidates_per_case min")
        if self.planted_feature is not None:
            if DEFAULT_KINDS.get(self.planted_feature) is not FeatureKind.NUMERIC:
                raise ValueError(f"planted feature {self.planted_feature!r} is not a numeric column")
            if ghi > lo // 3:
                raise ValueError("planted signal needs ground_truth max <= floor(min candidates / 3)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


_STATES = ["CA", "NY", "MA", "TX", "WA", "IL", "CO", "NC"]
_INDUSTRIES = ["High Tech", "Software", "Biotech", "Fintech", "Consumer", "Energy"]
_STAGES = ["Seed Stage", "Early Stage", "Balanced Stage", "Later Stage"]
_FIRM_TYPES = ["Private Equity Firm", "Corporate VC", "Angel Group", "Bank Affiliated"]
_CITIES = {"CA": "San Francisco", "NY": "New York", "MA": "Boston", "TX": "Austin",
           "WA": "Seattle", "IL": "Chicago", "CO": "Denver", "NC": "Raleigh"}
_COORDS = {"CA": (37.775, -122.418), "NY": (40.713, -74.006), "MA": (42.360, -71.059),
           "TX": (30.267, -97.743), "WA": (47.606, -122.332), "IL": (41.878, -87.630),
           "CO": (39.739, -104.990), "NC": (35.780, -78.639)}


def _r(x: float, digits: int) -> float:
    return round(x, digits)


def _synthetic_firm(rng: random.Random, firm_id: str) -> dict[str, FeatureValue]:
    state = rng.choice(_STATES)
    lat, lng = _COORDS[state]
    deals20 = rng.randint(0, 80)
    deals_cum = deals20 + rng.randint(0, 400)
    ipo20 = rng.randint(0, 6)
    num = FeatureValue.numeric
    cat = FeatureValue.categorical
    txt = FeatureValue.text
    return {
        "firmtype": cat(rng.choice(_FIRM_TYPES)),
        "firmnation": cat("United States"),
        "firmstate": cat(state),
        "firmcounty": cat(f"{_CITIES[state]} County") if rng.random() > 0.1 else FeatureValue.missing(FeatureKind.CATEGORICAL),
        "firmzipcode": cat(f"{rng.randint(10000, 99999)}"),
        "firmgeographypreference": txt(", ".join(sorted(rng.sample(_STATES, 2)))),
        "firmindustrypreference": txt(", ".join(sorted(rng.sample(_INDUSTRIES, 2)))),
        "firminvestmentstagepreference": txt(rng.choice(_STAGES)),
        "vcfirm_dealcount_20qtr": num(deals20),
        "vcfirm_numcompinvest_20qtr": num(rng.randint(0, deals20)),
        "vcfirmIPOcount_20qtr": num(ipo20),
        "vcfirm_IPOcount_cum": num(ipo20 + rng.randint(0, 30)),
        "vcfirm_dealcount_cum": num(deals_cum),
        "vcfirm_numcompinvest_cum": num(rng.randint(0, deals_cum)),
        "boncent": num(_r(rng.random() * 3.0, 4)),
        "degree": num(rng.randint(0, 250)),
        "pair_tie_strength": num(rng.randint(0, 5)),
        "uszip_vc": cat(f"{rng.randint(10000, 99999)}"),
        "uslat_vc": num(_r(lat + rng.uniform(-0.5, 0.5), 3)),
        "uslng_vc": num(_r(lng + rng.uniform(-0.5, 0.5), 3)),
        "uscity_vc": cat(_CITIES[state]),
        "uscounty_vc": cat(f"{_CITIES[state]} County"),
    }


def generate_synthetic(spec: SyntheticSpec) -> list[CasePool]:
    """Generate deterministic synthetic cases in the canonical column layout."""
    rng = random.Random(spec.seed)
    schema = tuple((c, DEFAULT_KINDS[c]) for c in CANDIDATE_COLUMNS)
    pools: list[CasePool] = []
    for i in range(spec.num_cases):
        case_id = f"C{i + 1:04d}"
        m = rng.randint(*spec.candidates_per_case)
        g = rng.randint(*spec.ground_truth_per_case)
        state = rng.choice(_STATES)
        lat, lng = _COORDS[state]
        year = rng.randint(1995, 2023)
        target = {
            "yearquarter": FeatureValue.categorical(f"{year}Q{rng.randint(1, 4)}"),
            "year": FeatureValue.numeric(year),
            "companyindustrymajorgroup": FeatureValue.categorical(rng.choice(_INDUSTRIES)),
            "companynation": FeatureValue.categorical("United States"),
            "companystate": FeatureValue.categorical(state),
            "companycity": FeatureValue.categorical(_CITIES[state]),
            "companyzip": FeatureValue.categorical(f"{rng.randint(10000, 99999)}"),
            "companylat": FeatureValue.numeric(lat),
            "companylng": FeatureValue.numeric(lng),
        }
        lead_id = f"V{i + 1:04d}L"
        lead = {"leadvc": FeatureValue.identifier(lead_id), **_synthetic_firm(rng, lead_id)}

        firm_ids = [f"V{i + 1:04d}-{j + 1:03d}" for j in range(m)]
        truth = set(rng.sample(firm_ids, g))
        rows = {fid: _synthetic_firm(rng, fid) for fid in firm_ids}
        if spec.planted_feature is not None:
            _plant(rng, rows, truth, spec.planted_feature)
        candidates = tuple(CandidateRecord(fid, rows[fid], fid in truth) for fid in firm_ids)
        ctx = TaskContext(case_id, lead, target, target["yearquarter"].value)  # type: ignore[arg-type]
        pools.append(CasePool(ctx, candidates, schema, g))
    return pools


def _plant(rng: random.Random, rows: dict[str, dict[str, FeatureValue]], truth: set[str], feature: str) -> None:
    # Non-truth firms live in [0, 10); truth firms in [20, 30), all distinct.
    span = max(1000, len(rows))
    values = rng.sample(range(span), len(rows))
    for fid, v in zip(sorted(rows), values):
        base = 20.0 if fid in truth else 0.0
        rows[fid][feature] = FeatureValue.numeric(round(base + 10.0 * v / span, 4))
