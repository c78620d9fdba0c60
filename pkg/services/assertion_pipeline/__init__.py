"""
Assertion Pipeline package - candidate assertions from prompt history, selected by exact ILP
"""

from .engine import build_result_matrix, evaluate_assertion, set_coverage, set_ffr, single_ffr
from .gateway import GatewayConfig, LlmGateway
from .generate import categorize_delta, generate_candidates, parse_fenced_json, synthesize_assertions
from .history import compute_delta, load_history, segment_sentences
from .models import (
    AssertionSpec, CandidateSet, ExampleSet, ResultMatrix, SelectionConfig,
    SelectionMode, SelectionResult, SubsumptionMatrix
)
from .selection import solve_baseline, solve_cov, solve_no_examples, solve_sub
from .subsume import build_subsumption_matrix, dsl_subsumes

__all__ = [
    "build_result_matrix",
    "evaluate_assertion",
    "set_coverage",
    "set_ffr",
    "single_ffr",
    "GatewayConfig",
    "LlmGateway",
    "categorize_delta",
    "generate_candidates",
    "parse_fenced_json",
    "synthesize_assertions",
    "compute_delta",
    "load_history",
    "segment_sentences",
    "AssertionSpec",
    "CandidateSet",
    "ExampleSet",
    "ResultMatrix",
    "SelectionConfig",
    "SelectionMode",
    "SelectionResult",
    "SubsumptionMatrix",
    "solve_baseline",
    "solve_cov",
    "solve_no_examples",
    "solve_sub",
    "build_subsumption_matrix",
    "dsl_subsumes",
]
