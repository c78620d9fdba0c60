"""
Run report - metrics per solved mode, self-consistency check and text rendering
"""
import logging
from typing import List, Optional, Sequence

from .engine import set_coverage, set_ffr
from .models import (
    ModeMetrics,
    ResultMatrix,
    RunReport,
    SelectionMode,
    SelectionResult,
    SelectionStatus,
    SubsumptionMatrix,
)

logger = logging.getLogger(__name__)

_TOLERANCE = 1e-9


def mode_metrics(result: SelectionResult) -> ModeMetrics:
    return ModeMetrics(
        mode=result.mode,
        status=result.status,
        fraction_selected=result.fraction_selected,
        fraction_excluded_not_subsumed=result.fraction_excluded_not_subsumed,
        ffr=result.ffr,
        coverage=result.coverage,
        selected=len(result.selected_ids),
        excluded_not_subsumed=len(result.excluded_not_subsumed_ids),
    )


def recompute_metrics(result: SelectionResult, M: ResultMatrix, labels: Sequence[int],
                      K: Optional[SubsumptionMatrix]) -> ModeMetrics:
    """The four metrics derived from the artifacts alone"""
    ids = M.assertion_ids
    chosen = set(result.selected_ids)
    excluded = [
        f for f in ids
        if f not in chosen and not (K is not None and any(K.implies(s, f) for s in result.selected_ids))
    ]
    # infeasible runs and time-outs without an incumbent carry no selection
    solved = result.status == SelectionStatus.OPTIMAL or result.coverage is not None
    if not solved:
        excluded = []
    scored = solved and result.mode != SelectionMode.NO_EXAMPLES
    m = len(ids)
    return ModeMetrics(
        mode=result.mode,
        status=result.status,
        fraction_selected=len(chosen) / m if m else 0.0,
        fraction_excluded_not_subsumed=len(excluded) / m if m else 0.0,
        ffr=set_ffr(M, labels, result.selected_ids) if scored else None,
        coverage=set_coverage(M, labels, result.selected_ids) if scored else None,
        selected=len(chosen),
        excluded_not_subsumed=len(excluded),
    )


def _close(a: Optional[float], b: Optional[float]) -> bool:
    if a is None or b is None:
        return a is b
    return abs(a - b) <= _TOLERANCE


def metrics_agree(reported: ModeMetrics, recomputed: ModeMetrics) -> bool:
    return (
        reported.selected == recomputed.selected
        and reported.excluded_not_subsumed == recomputed.excluded_not_subsumed
        and _close(reported.fraction_selected, recomputed.fraction_selected)
        and _close(reported.fraction_excluded_not_subsumed, recomputed.fraction_excluded_not_subsumed)
        and _close(reported.ffr, recomputed.ffr)
        and _close(reported.coverage, recomputed.coverage)
    )


def check_consistency(report: RunReport, results: List[SelectionResult], M: ResultMatrix,
                      labels: Sequence[int], K: Optional[SubsumptionMatrix]) -> bool:
    """Compare every reported metric row with a recomputation; sets report.consistent"""
    ok = True
    for reported, result in zip(report.metrics, results):
        recomputed = recompute_metrics(result, M, labels, K)
        if not metrics_agree(reported, recomputed):
            logger.error("Reported %s metrics disagree with the artifacts: %s vs %s",
                         result.mode.value, reported, recomputed)
            ok = False
    report.consistent = ok
    return ok


def _pct(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.1%}"


def format_metrics(metrics: ModeMetrics) -> str:
    return (
        f"{metrics.mode.value:<12} {metrics.status.value:<10} "
        f"selected {metrics.selected:>3} ({_pct(metrics.fraction_selected)})  "
        f"excluded-not-subsumed {metrics.excluded_not_subsumed:>3} "
        f"({_pct(metrics.fraction_excluded_not_subsumed)})  "
        f"FFR {_pct(metrics.ffr)}  coverage {_pct(metrics.coverage)}"
    )


def infeasibility_hint(result: SelectionResult) -> str:
    best = result.max_coverage_at_tau
    best_text = "unknown" if best is None else f"{best:.3f}"
    return (
        f"No selection reaches coverage >= {result.alpha} with FFR <= {result.tau}. "
        f"The best coverage reachable at this tau is {best_text}. "
        "Lower alpha or raise tau and retry, halving the gap each time."
    )


def render_report(report: RunReport) -> str:
    lines = ["Run report", "=========="]
    if report.skipped_stages:
        lines.append(f"Resumed, skipped stages: {', '.join(report.skipped_stages)}")
    for stage, seconds in report.stage_timings.items():
        lines.append(f"  {stage:<10} {seconds:8.2f}s")

    if report.generation:
        failed = [g for g in report.generation if not g.ok]
        lines.append(f"Generation: {len(report.generation)} deltas, {len(failed)} failed")
        for g in failed:
            lines.append(f"  delta {g.delta_version}: {g.error}")
    if report.evaluation_errors:
        lines.append(f"Evaluation errors: {len(report.evaluation_errors)} cells scored as failures")

    sub = report.subsumption
    counts = ", ".join(f"{k} {v}" for k, v in sub.provenance_counts.items())
    lines.append(f"Subsumption: {counts or 'not run'} (LLM {sub.llm_status})")
    if sub.refutations:
        lines.append(f"  {len(sub.refutations)} LLM pairs refuted by examples")
    for alarm in sub.consistency_alarms:
        lines.append(f"  ALARM {alarm}")

    lines.append("Selection:")
    for metrics in report.metrics:
        lines.append("  " + format_metrics(metrics))
    if report.consistent is not None:
        lines.append(f"Self-consistency check: {'passed' if report.consistent else 'FAILED'}")
    return "\n".join(lines)
