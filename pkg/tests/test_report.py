"""
Tests for the run report: recomputed metrics, the consistency check and rendering
"""
from services.assertion_pipeline.models import (
    GenerationOutcome,
    Refutation,
    RunReport,
    SelectionMode,
    SelectionResult,
    SelectionStatus,
    SubsumptionSummary,
)
from services.assertion_pipeline.report import (
    check_consistency,
    format_metrics,
    infeasibility_hint,
    mode_metrics,
    recompute_metrics,
    render_report,
)
from services.assertion_pipeline.selection import solve_baseline, solve_cov, solve_sub


def _results(instance_w):
    M, labels, K = instance_w
    return [
        solve_baseline(M, labels, tau=0.25, K=K),
        solve_cov(M, labels, alpha=0.6, tau=0.25, K=K),
        solve_sub(M, labels, K, alpha=0.6, tau=0.25),
    ]


def test_mode_metrics(instance_w):
    sub = _results(instance_w)[2]
    metrics = mode_metrics(sub)
    assert metrics.selected == 1
    assert metrics.excluded_not_subsumed == 1
    assert abs(metrics.fraction_selected - 1 / 3) < 1e-9
    assert metrics.coverage == 1.0
    assert metrics.ffr == 0.0


def test_recomputed_metrics_agree(instance_w):
    M, labels, K = instance_w
    results = _results(instance_w)
    report = RunReport(metrics=[mode_metrics(r) for r in results])
    assert check_consistency(report, results, M, labels, K)
    assert report.consistent is True


def test_tampered_metrics_are_caught(instance_w):
    M, labels, K = instance_w
    results = _results(instance_w)
    report = RunReport(metrics=[mode_metrics(r) for r in results])
    report.metrics[1] = report.metrics[1].model_copy(update={"coverage": 0.5})
    assert not check_consistency(report, results, M, labels, K)
    assert report.consistent is False


def test_infeasible_result_recomputes_to_nothing(instance_w):
    M, labels, K = instance_w
    result = SelectionResult(mode=SelectionMode.COV, alpha=1.0, tau=0.0,
                             status=SelectionStatus.INFEASIBLE, num_candidates=3)
    recomputed = recompute_metrics(result, M, labels, K)
    assert recomputed.selected == 0
    assert recomputed.excluded_not_subsumed == 0
    assert recomputed.coverage is None
    assert recomputed == mode_metrics(result)


def test_no_examples_metrics_carry_no_rates(instance_w):
    M, labels, K = instance_w
    result = SelectionResult(mode=SelectionMode.NO_EXAMPLES, status=SelectionStatus.OPTIMAL,
                             selected_ids=["f2", "f3"], objective_value=2, num_candidates=3)
    recomputed = recompute_metrics(result, M, labels, K)
    assert recomputed.ffr is None
    assert recomputed.excluded_not_subsumed == 0


def test_format_metrics(instance_w):
    line = format_metrics(mode_metrics(_results(instance_w)[2]))
    assert line.startswith("sub")
    assert "selected   1 (33.3%)" in line
    assert "FFR 0.0%" in line
    assert "coverage 100.0%" in line


def test_infeasibility_hint():
    result = SelectionResult(mode=SelectionMode.COV, alpha=0.9, tau=0.1,
                             status=SelectionStatus.INFEASIBLE, max_coverage_at_tau=0.5)
    hint = infeasibility_hint(result)
    assert "coverage >= 0.9" in hint
    assert "FFR <= 0.1" in hint
    assert "0.500" in hint

    unknown = result.model_copy(update={"max_coverage_at_tau": None})
    assert "unknown" in infeasibility_hint(unknown)


def test_render_report(instance_w):
    M, labels, K = instance_w
    results = _results(instance_w)
    report = RunReport(
        stage_timings={"generate": 1.5, "select": 0.02},
        generation=[
            GenerationOutcome(delta_version=1, ok=True, concepts=2, specs=2),
            GenerationOutcome(delta_version=2, ok=False, error="ProviderError: 503"),
        ],
        subsumption=SubsumptionSummary(
            provenance_counts={"DSL_RULE": 0, "LLM": 1, "TRANSITIVE": 0},
            llm_status="ok",
            refutations=[Refutation(subsumer="f1", subsumed="f2", witness_example_id="e3")],
            consistency_alarms=["DSL rule f1 -> f3 contradicted by example e1"],
        ),
        metrics=[mode_metrics(r) for r in results],
        skipped_stages=["evaluate"],
    )
    check_consistency(report, results, M, labels, K)
    text = render_report(report)

    assert "Resumed, skipped stages: evaluate" in text
    assert "Generation: 2 deltas, 1 failed" in text
    assert "delta 2: ProviderError: 503" in text
    assert "DSL_RULE 0, LLM 1, TRANSITIVE 0 (LLM ok)" in text
    assert "1 LLM pairs refuted by examples" in text
    assert "ALARM DSL rule f1 -> f3" in text
    assert text.count("selected") == 3
    assert text.endswith("Self-consistency check: passed")
