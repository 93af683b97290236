"""Hierarchical agent teams for venture-capital co-investor shortlisting.

A planner designs specialist evaluators per deal, each specialist ranks the
candidate pool from its own angle, and a supervisor merges their shortlists
into the final top-k recommendation.
"""

from partnermas.bench import ExperimentConfig, match_rate, confidence_interval, run_bench
from partnermas.domain import CasePool, RankedShortlist, final_shortlist_size, specialist_shortlist_size
from partnermas.ingest import load_cases, save_cases
from partnermas.pipeline import PipelineConfig, run_partner_mas
from partnermas.supervisor import AggregationMode, ImportanceWeights, aggregate_deterministic

__version__ = "0.1.0"

__all__ = [
    "AggregationMode",
    "CasePool",
    "ExperimentConfig",
    "ImportanceWeights",
    "PipelineConfig",
    "RankedShortlist",
    "aggregate_deterministic",
    "confidence_interval",
    "final_shortlist_size",
    "load_cases",
    "match_rate",
    "run_bench",
    "run_partner_mas",
    "save_cases",
    "specialist_shortlist_size",
]
