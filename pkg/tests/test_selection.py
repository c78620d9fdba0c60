"""
Tests for assertion selection: the exact solvers, the baseline, the example-free rule and the oracle
"""
import time

import numpy as np
import pytest

from services.assertion_pipeline.artifacts import load_subsumption
from services.assertion_pipeline.errors import DimensionMismatchError, PreconditionError, TooLargeError
from services.assertion_pipeline.models import (
    ResultMatrix,
    SelectionConfig,
    SelectionMode,
    SelectionStatus,
    SubsumptionMatrix,
)
from services.assertion_pipeline.oracle import brute_force_oracle
from services.assertion_pipeline.selection import (
    max_coverage_at_tau,
    select,
    solve_baseline,
    solve_cov,
    solve_ilp,
    solve_no_examples,
    solve_sub,
)
from services.assertion_pipeline.subsume import subsumption_array, transitive_closure

from conftest import FIXTURES

MOVIE_IDS = [
    "a1_1_personalized_note_user",
    "a1_2_mention_movie_name",
    "a2_1_reference_movie_genre_cast",
    "a3_1_concise",
    "a3_2_concise",
    "a3_3_concise",
    "a4_1_not_exceed_100_words",
    "a5_1_mention_movie_genre",
    "a5_2_include_shared_cast_members",
    "a6_1_mention_awards_critical_acclaim",
    "a6_2_mention_awards_critical_acclaim",
    "a7_1_not_include_references_sensitive",
    "a7_2_not_include_references_sensitive",
]
MOVIE_CELLS = [
    [1] * 13,
    [1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 1, 1, 1],
    [1, 1, 1, 0, 1, 0, 0, 1, 1, 1, 1, 1, 1],
    [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0],
    [1, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0, 1, 1],
    [1] * 13,
    [1, 1, 1, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1],
    [1] * 13,
]
MOVIE_LABELS = [1, 1, 0, 0, 0, 1, 0, 1]


@pytest.fixture
def movie_matrix():
    return ResultMatrix(
        example_ids=[f"e{i}" for i in range(1, 9)], assertion_ids=MOVIE_IDS, cells=MOVIE_CELLS
    )


@pytest.fixture
def graph():
    return load_subsumption(FIXTURES / "graph" / "subsumption.json")


def _random_instance(seed, max_examples=20, max_assertions=10):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_examples + 1))
    m = int(rng.integers(1, max_assertions + 1))
    ids = [f"c{j:02d}" for j in rng.permutation(m)]
    cells = (rng.random((n, m)) < rng.uniform(0.5, 0.95)).astype(int)
    labels = rng.integers(0, 2, n)
    labels[rng.choice(n, 2, replace=False)] = [0, 1]
    edges = [(ids[i], ids[j]) for i in range(m) for j in range(m) if i != j and rng.random() < 0.15]
    M = ResultMatrix(example_ids=[f"e{i}" for i in range(n)], assertion_ids=ids, cells=cells.tolist())
    K = transitive_closure(SubsumptionMatrix.from_edges(ids, edges))
    alpha = float(rng.choice([0.4, 0.6, 0.8, 1.0]))
    tau = float(rng.choice([0.0, 0.1, 0.25, 0.5]))
    return M, [int(y) for y in labels], K, alpha, tau


# ---------------------------------------------------------------------------
# The four-example instance
# ---------------------------------------------------------------------------

def test_cov_on_instance_w(instance_w):
    M, labels, _ = instance_w
    result = solve_cov(M, labels, alpha=0.6, tau=0.25)
    assert result.status == SelectionStatus.OPTIMAL
    assert result.selected_ids == ["f3"]
    assert result.objective_value == 1
    assert result.coverage == 1.0
    assert result.ffr == 0.0


def test_sub_on_instance_w(instance_w):
    M, labels, K = instance_w
    result = solve_sub(M, labels, K, alpha=0.6, tau=0.25)
    assert result.selected_ids == ["f3"]
    assert result.excluded_not_subsumed_ids == ["f2"]
    assert result.objective_value == 2


def test_instance_w_at_full_coverage(instance_w):
    M, labels, K = instance_w
    cov = solve_cov(M, labels, alpha=1.0, tau=0.25)
    assert cov.selected_ids == ["f3"]
    assert cov.coverage == 1.0

    sub = solve_sub(M, labels, K, alpha=1.0, tau=0.25)
    assert sub.selected_ids == ["f3"]
    assert sub.excluded_not_subsumed_ids == ["f2"]
    assert sub.objective_value == 2


def test_zero_alpha_selects_nothing_for_cov(instance_w):
    M, labels, _ = instance_w
    result = solve_cov(M, labels, alpha=0.0, tau=0.25)
    assert result.status == SelectionStatus.OPTIMAL
    assert result.selected_ids == []
    assert result.objective_value == 0


def test_zero_alpha_with_complete_implications(instance_w):
    M, labels, _ = instance_w
    everything = SubsumptionMatrix(assertion_ids=M.assertion_ids, cells=[[1] * 3 for _ in range(3)])
    result = solve_sub(M, labels, everything, alpha=0.0, tau=0.25)
    assert len(result.selected_ids) <= 1
    assert result.selected_ids == ["f1"]
    assert result.excluded_not_subsumed_ids == []
    assert result.objective_value == 1


def test_zero_alpha_with_no_implications_prefers_empty(instance_w):
    M, labels, _ = instance_w
    result = solve_sub(M, labels, SubsumptionMatrix.identity(M.assertion_ids), alpha=0.0, tau=1.0)
    assert result.status == SelectionStatus.OPTIMAL
    assert result.selected_ids == []
    assert result.excluded_not_subsumed_ids == ["f1", "f2", "f3"]
    assert result.objective_value == 3


def test_baseline_on_instance_w(instance_w):
    M, labels, K = instance_w
    assert solve_baseline(M, labels, tau=0.25).selected_ids == ["f1", "f3"]
    assert solve_baseline(M, labels, tau=1.0).selected_ids == ["f1", "f2", "f3"]

    result = solve_baseline(M, labels, tau=0.25, K=K)
    assert result.excluded_not_subsumed_ids == ["f2"]
    assert result.alpha is None


def test_max_coverage_on_instance_w(instance_w):
    M, labels, _ = instance_w
    assert max_coverage_at_tau(M, labels, 0.25) == 1.0
    assert max_coverage_at_tau(M, labels, 0.0) == 1.0


def test_select_dispatch(instance_w, graph):
    M, labels, K = instance_w
    assert select(M, labels, SelectionConfig(mode=SelectionMode.COV)).selected_ids == ["f3"]
    assert select(M, labels, SelectionConfig(mode=SelectionMode.SUB), K).objective_value == 2
    assert select(None, None, SelectionConfig(mode=SelectionMode.NO_EXAMPLES), graph).selected_ids == ["a", "e"]

    with pytest.raises(PreconditionError):
        select(M, labels, SelectionConfig(mode=SelectionMode.SUB))
    with pytest.raises(PreconditionError):
        select(None, None, SelectionConfig(mode=SelectionMode.COV))
    with pytest.raises(DimensionMismatchError):
        select(M, labels, SelectionConfig(mode=SelectionMode.SUB), SubsumptionMatrix.identity(["f1", "f2"]))


def test_threshold_preconditions(instance_w):
    M, labels, K = instance_w
    with pytest.raises(PreconditionError):
        solve_cov(M, labels, alpha=1.5, tau=0.25)
    with pytest.raises(PreconditionError):
        solve_baseline(M, labels, tau=-0.1)
    with pytest.raises(PreconditionError):
        solve_ilp(M, labels, 0.6, 0.25, SelectionMode.SUB)
    with pytest.raises(PreconditionError):
        solve_ilp(M, labels, 0.6, 0.25, SelectionMode.BASELINE)
    with pytest.raises(DimensionMismatchError):
        solve_cov(M, labels[:3], alpha=0.6, tau=0.25)


# ---------------------------------------------------------------------------
# Selection without examples
# ---------------------------------------------------------------------------

def test_no_examples_picks_source_components(graph):
    result = solve_no_examples(graph)
    assert result.selected_ids == ["a", "e"]
    assert result.excluded_not_subsumed_ids == []
    assert result.objective_value == 2

    closed = transitive_closure(graph)
    oracle = brute_force_oracle(None, None, closed, mode=SelectionMode.NO_EXAMPLES)
    assert oracle.objective_value == result.objective_value
    assert oracle.selected_ids == result.selected_ids


def test_no_examples_identity_selects_everything():
    ids = ["x", "y", "z"]
    result = solve_no_examples(SubsumptionMatrix.identity(ids))
    assert result.selected_ids == ids
    assert result.objective_value == 3


def test_no_examples_cycle_keeps_smallest_id():
    K = SubsumptionMatrix(assertion_ids=["b", "a"], cells=[[1, 1], [1, 1]])
    result = solve_no_examples(K)
    assert result.selected_ids == ["a"]
    assert result.objective_value == 1


# ---------------------------------------------------------------------------
# Edge cases
# ---------------------------------------------------------------------------

def test_nothing_flags_any_failure():
    M = ResultMatrix(example_ids=["e1", "e2"], assertion_ids=["p", "q"], cells=[[1, 1], [1, 1]])
    result = solve_cov(M, [0, 1], alpha=0.5, tau=0.5)
    assert result.status == SelectionStatus.INFEASIBLE
    assert result.selected_ids == []
    assert result.max_coverage_at_tau == 0.0
    assert brute_force_oracle(M, [0, 1], alpha=0.5, tau=0.5).status == SelectionStatus.INFEASIBLE


def test_no_failures_selects_nothing():
    M = ResultMatrix(example_ids=["e1", "e2"], assertion_ids=["p", "q"], cells=[[1, 0], [1, 1]])
    result = solve_cov(M, [1, 1], alpha=1.0, tau=0.0)
    assert result.status == SelectionStatus.OPTIMAL
    assert result.selected_ids == []
    assert result.coverage == 1.0


def test_no_candidates():
    M = ResultMatrix(example_ids=["e1", "e2"], assertion_ids=[], cells=[[], []])
    assert solve_cov(M, [0, 1], alpha=0.0, tau=0.0).status == SelectionStatus.OPTIMAL
    assert solve_cov(M, [0, 1], alpha=0.5, tau=0.0).status == SelectionStatus.INFEASIBLE


def test_oracle_refuses_large_instances():
    ids = [f"c{j:02d}" for j in range(21)]
    M = ResultMatrix(example_ids=["e1"], assertion_ids=ids, cells=[[1] * 21])
    with pytest.raises(TooLargeError):
        brute_force_oracle(M, [0])


# ---------------------------------------------------------------------------
# Exactness against the exhaustive oracle
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(200))
def test_solvers_match_oracle(seed):
    M, labels, K, alpha, tau = _random_instance(seed)
    for mode in (SelectionMode.COV, SelectionMode.SUB):
        expected = brute_force_oracle(M, labels, K, alpha, tau, mode)
        got, _ = solve_ilp(M, labels, alpha, tau, mode, K)
        assert got.status == expected.status, (seed, mode)
        if expected.status == SelectionStatus.OPTIMAL:
            assert got.objective_value == expected.objective_value, (seed, mode)
            assert got.selected_ids == expected.selected_ids, (seed, mode)
            assert got.excluded_not_subsumed_ids == expected.excluded_not_subsumed_ids


def test_movie_selection_matches_oracle(movie_matrix):
    result = solve_cov(movie_matrix, MOVIE_LABELS, alpha=0.6, tau=0.25)
    assert result.selected_ids == ["a3_1_concise", "a5_2_include_shared_cast_members"]
    assert result.coverage == 0.75
    assert result.ffr == 0.0

    K = transitive_closure(SubsumptionMatrix.from_edges(MOVIE_IDS, [
        ("a4_1_not_exceed_100_words", "a3_2_concise"),
        ("a5_1_mention_movie_genre", "a2_1_reference_movie_genre_cast"),
        ("a3_1_concise", "a3_3_concise"),
        ("a3_3_concise", "a3_1_concise"),
        ("a7_2_not_include_references_sensitive", "a7_1_not_include_references_sensitive"),
    ]))
    for mode in (SelectionMode.COV, SelectionMode.SUB):
        got, _ = solve_ilp(movie_matrix, MOVIE_LABELS, 0.6, 0.25, mode, K)
        expected = brute_force_oracle(movie_matrix, MOVIE_LABELS, K, 0.6, 0.25, mode)
        assert got.selected_ids == expected.selected_ids
        assert got.objective_value == expected.objective_value


def _check_solution(M, labels, K, result, solution):
    ids = M.assertion_ids
    cells = np.asarray(M.cells)
    x = [int(a in result.selected_ids) for a in ids]
    assert solution.x == x

    def flagged(i):
        return int(any(cells[i, j] == 0 and x[j] for j in range(len(ids))))

    assert solution.failure_rows == [i for i, y in enumerate(labels) if y == 0]
    assert solution.good_rows == [i for i, y in enumerate(labels) if y == 1]
    assert solution.u == [flagged(i) for i in solution.failure_rows]
    assert solution.z == [flagged(i) for i in solution.good_rows]

    if result.mode == SelectionMode.SUB:
        k = subsumption_array(K, ids)
        r = [int(any(x[i] and k[i, j] for i in range(len(ids)) if i != j)) for j in range(len(ids))]
        assert solution.r == r
        assert solution.s == [(1 - x[j]) * (1 - r[j]) for j in range(len(ids))]
        assert sum(x) + sum(solution.s) == result.objective_value
    else:
        assert solution.r == solution.s == []
        assert sum(x) == result.objective_value


def test_auxiliary_variables_follow_selection(instance_w):
    M, labels, K = instance_w
    for mode in (SelectionMode.COV, SelectionMode.SUB):
        result, solution = solve_ilp(M, labels, 0.6, 0.25, mode, K)
        _check_solution(M, labels, K, result, solution)

    for seed in range(20):
        M, labels, K, alpha, tau = _random_instance(seed)
        result, solution = solve_ilp(M, labels, alpha, tau, SelectionMode.SUB, K)
        if result.status == SelectionStatus.OPTIMAL:
            _check_solution(M, labels, K, result, solution)
        else:
            assert solution is None


def test_infeasible_verdict_matches_max_coverage():
    for seed in range(50):
        M, labels, K, _, tau = _random_instance(seed)
        result = solve_cov(M, labels, alpha=1.0, tau=tau)
        best = max_coverage_at_tau(M, labels, tau)
        if result.status == SelectionStatus.INFEASIBLE:
            assert best < 1.0
            assert result.max_coverage_at_tau == best
        else:
            assert best == 1.0


# ---------------------------------------------------------------------------
# Scale
# ---------------------------------------------------------------------------

def test_largest_pipeline_scale():
    rng = np.random.default_rng(106)
    n, m = 82, 106
    labels = [int(y) for y in rng.integers(0, 2, n)]
    flag_rate = np.where(np.array(labels)[:, None] == 0, 0.2, 0.02)
    cells = (rng.random((n, m)) >= flag_rate).astype(int)
    ids = [f"a{j:03d}" for j in range(m)]
    edges = [(ids[i], ids[j]) for i in range(m) for j in range(m) if i != j and rng.random() < 0.01]
    M = ResultMatrix(example_ids=[f"e{i}" for i in range(n)], assertion_ids=ids, cells=cells.tolist())
    K = transitive_closure(SubsumptionMatrix.from_edges(ids, edges))

    start = time.perf_counter()
    sub = solve_sub(M, labels, K, alpha=0.6, tau=0.25)
    sub_seconds = time.perf_counter() - start

    start = time.perf_counter()
    cov = solve_cov(M, labels, alpha=0.6, tau=0.25)
    cov_seconds = time.perf_counter() - start

    for result in (sub, cov):
        assert result.status == SelectionStatus.OPTIMAL
        assert result.coverage >= 0.6
        assert result.ffr <= 0.25
    assert sub_seconds < 5.0
    assert cov_seconds < 2.0
