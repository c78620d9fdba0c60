"""
Assertion Selection - exact ILP solvers for the coverage and subsumption objectives,
plus the single-FFR baseline and the example-free source-component rule
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from ortools.linear_solver import pywraplp

from .engine import label_vector, set_coverage, set_ffr, single_ffr
from .errors import DimensionMismatchError, PipelineError, PreconditionError
from .models import (
    ResultMatrix,
    SelectionConfig,
    SelectionMode,
    SelectionResult,
    SelectionStatus,
    SubsumptionMatrix,
)
from .subsume import subsumption_array

logger = logging.getLogger(__name__)

EPSILON = 1e-9


@dataclass
class IlpSolution:
    """Solver values for every variable of the last solve, rounded to 0/1"""
    x: List[int] = field(default_factory=list)
    u: List[int] = field(default_factory=list)
    z: List[int] = field(default_factory=list)
    r: List[int] = field(default_factory=list)
    s: List[int] = field(default_factory=list)
    failure_rows: List[int] = field(default_factory=list)
    good_rows: List[int] = field(default_factory=list)


@dataclass
class _Instance:
    """Dense view of M, labels and K shared by the solvers"""
    ids: List[str]
    cells: np.ndarray
    y: np.ndarray
    K: np.ndarray

    @property
    def m(self) -> int:
        return len(self.ids)

    @property
    def failure_rows(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.y == 0)]

    @property
    def good_rows(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.y == 1)]

    def flags(self, row: int) -> List[int]:
        return [int(j) for j in np.flatnonzero(self.cells[row] == 0)]


def _check_thresholds(alpha: Optional[float], tau: Optional[float]) -> None:
    for name, value in (("alpha", alpha), ("tau", tau)):
        if value is not None and not 0.0 <= value <= 1.0:
            raise PreconditionError(f"{name} must be in [0, 1], got {value}")


def _instance(M: ResultMatrix, labels: Sequence[int], K: Optional[SubsumptionMatrix]) -> _Instance:
    y = label_vector(M, labels)
    cells = np.asarray(M.cells, dtype=np.int8).reshape(len(M.example_ids), len(M.assertion_ids))
    if K is None:
        k = np.eye(len(M.assertion_ids), dtype=np.int8)
    else:
        k = subsumption_array(K, M.assertion_ids)
    return _Instance(ids=list(M.assertion_ids), cells=cells, y=y, K=k)


def required_caught(n_failures: int, alpha: float) -> int:
    return math.ceil(alpha * n_failures - EPSILON) if n_failures else 0


def allowed_false(n_good: int, tau: float) -> int:
    return math.floor(tau * n_good + EPSILON)


def excluded_not_subsumed(selected: np.ndarray, K: np.ndarray) -> np.ndarray:
    """G as a mask: not selected and not implied by any selected assertion"""
    if not selected.any():
        return ~selected
    subsumed = K[selected].any(axis=0)
    return ~selected & ~subsumed


def _objective(inst: _Instance, selected: np.ndarray, mode: SelectionMode) -> int:
    if mode == SelectionMode.SUB:
        return int(selected.sum() + excluded_not_subsumed(selected, inst.K).sum())
    return int(selected.sum())


def _feasible(inst: _Instance, selected: np.ndarray, alpha: float, tau: float) -> bool:
    flagged = (inst.cells[:, selected] == 0).any(axis=1) if selected.any() else np.zeros(len(inst.y), bool)
    caught = int((flagged & (inst.y == 0)).sum())
    false = int((flagged & (inst.y == 1)).sum())
    return (caught >= required_caught(int((inst.y == 0).sum()), alpha)
            and false <= allowed_false(int((inst.y == 1).sum()), tau))


class _SelectionModel:
    """
    Binary program over x_j with the auxiliary u, z, r, s variables.

    u_i marks a covered failure, z_i a flagged good example, r_j an assertion
    implied by the selection, and s_j one neither selected nor implied. first_j
    marks the lowest-ranked selected assertion and drives the tie-break.
    """

    def __init__(self, inst: _Instance, alpha: Optional[float], tau: float, with_subsumption: bool):
        solver = pywraplp.Solver.CreateSolver("CBC") or pywraplp.Solver.CreateSolver("SCIP")
        if solver is None:
            raise PipelineError("OR-Tools has no MIP backend available (CBC or SCIP)")
        self.solver = solver
        self.inst = inst
        m = inst.m

        self.x = [solver.BoolVar(f"x_{j}") for j in range(m)]
        self.u = {}
        self.z = {}
        for i in inst.failure_rows:
            flags = inst.flags(i)
            self.u[i] = solver.BoolVar(f"u_{i}")
            self._at_most_any(self.u[i], flags)
            for j in flags:
                solver.Add(self.u[i] >= self.x[j])
        for i in inst.good_rows:
            flags = inst.flags(i)
            self.z[i] = solver.BoolVar(f"z_{i}")
            self._at_most_any(self.z[i], flags)
            for j in flags:
                solver.Add(self.z[i] >= self.x[j])

        if alpha is not None and self.u:
            need = required_caught(len(self.u), alpha)
            if need > 0:
                solver.Add(solver.Sum(list(self.u.values())) >= need)
        if self.z:
            solver.Add(solver.Sum(list(self.z.values())) <= allowed_false(len(self.z), tau))

        self.r = []
        self.s = []
        if with_subsumption:
            for j in range(m):
                r_j = solver.BoolVar(f"r_{j}")
                s_j = solver.BoolVar(f"s_{j}")
                implying = [i for i in range(m) if i != j and inst.K[i, j]]
                for i in implying:
                    solver.Add(r_j >= self.x[i])
                self._at_most_any(r_j, implying)
                solver.Add(s_j <= 1 - self.x[j])
                solver.Add(s_j <= 1 - r_j)
                solver.Add(s_j >= 1 - self.x[j] - r_j)
                self.r.append(r_j)
                self.s.append(s_j)

        self.objective = solver.Sum(self.x + self.s)

        # ranks follow sorted id order; rank 1 is the smallest id
        self.rank = {j: k + 1 for k, j in enumerate(sorted(range(m), key=lambda j: inst.ids[j]))}
        self.first = [solver.BoolVar(f"first_{j}") for j in range(m)]
        for j in range(m):
            solver.Add(self.first[j] <= self.x[j])
        solver.Add(solver.Sum(self.first) <= 1)
        solver.Add(m * solver.Sum(self.first) >= solver.Sum(self.x))

    def _at_most_any(self, var, columns: List[int]) -> None:
        """var <= sum of x over columns; pinned to 0 when there are none"""
        if columns:
            self.solver.Add(var <= self.solver.Sum([self.x[j] for j in columns]))
        else:
            var.SetBounds(0, 0)

    def solve(self, deadline: float) -> int:
        remaining = max(1, int((deadline - time.monotonic()) * 1000))
        self.solver.SetTimeLimit(remaining)
        return self.solver.Solve()

    def selected(self) -> np.ndarray:
        return np.array([v.solution_value() > 0.5 for v in self.x], dtype=bool)

    def snapshot(self) -> IlpSolution:
        def values(vs):
            return [int(round(v.solution_value())) for v in vs]
        return IlpSolution(
            x=values(self.x),
            u=values([self.u[i] for i in sorted(self.u)]),
            z=values([self.z[i] for i in sorted(self.z)]),
            r=values(self.r),
            s=values(self.s),
            failure_rows=sorted(self.u),
            good_rows=sorted(self.z),
        )


def _lexicographic_optimum(model: _SelectionModel, mode: SelectionMode, alpha: float, tau: float,
                           deadline: float) -> Tuple[SelectionStatus, Optional[np.ndarray]]:
    """
    Minimum objective, ties broken by the smallest sorted id list
    """
    inst = model.inst
    solver = model.solver
    m = inst.m

    solver.Minimize((m + 1) * model.objective + solver.Sum([model.rank[j] * model.first[j] for j in range(m)]))
    status = model.solve(deadline)
    if status == pywraplp.Solver.INFEASIBLE:
        return SelectionStatus.INFEASIBLE, None
    if status not in (pywraplp.Solver.OPTIMAL, pywraplp.Solver.FEASIBLE):
        return SelectionStatus.TIME_LIMIT, None
    incumbent = model.selected()
    if status == pywraplp.Solver.FEASIBLE:
        return SelectionStatus.TIME_LIMIT, incumbent

    optimum = _objective(inst, incumbent, mode)
    empty = np.zeros(m, dtype=bool)
    if _feasible(inst, empty, alpha, tau) and _objective(inst, empty, mode) == optimum:
        return SelectionStatus.OPTIMAL, empty

    solver.Add(model.objective <= optimum)
    solver.Minimize(solver.Sum([model.rank[j] * model.first[j] for j in range(m)]))
    by_rank = sorted(range(m), key=lambda j: model.rank[j])

    prefix = empty.copy()
    fixed_upto = 0
    while True:
        chosen = next(j for j in by_rank if model.first[j].solution_value() > 0.5)
        for j in by_rank[fixed_upto:model.rank[chosen]]:
            model.x[j].SetBounds(int(j == chosen), int(j == chosen))
            model.first[j].SetBounds(0, 0)
        prefix[chosen] = True
        fixed_upto = model.rank[chosen]

        if _feasible(inst, prefix, alpha, tau) and _objective(inst, prefix, mode) == optimum:
            break
        status = model.solve(deadline)
        if status != pywraplp.Solver.OPTIMAL:
            logger.warning("Tie-break solve stopped early; returning the first optimum found")
            return SelectionStatus.TIME_LIMIT, incumbent

    for j in by_rank[fixed_upto:]:
        model.x[j].SetBounds(0, 0)
    for j in range(m):
        model.first[j].SetBounds(0, 1)
    # every x is fixed, so this only settles the auxiliary variables
    model.solve(max(deadline, time.monotonic() + 10))
    return SelectionStatus.OPTIMAL, prefix


def _result(inst: _Instance, M: ResultMatrix, labels: Sequence[int], mode: SelectionMode,
            alpha: Optional[float], tau: Optional[float], status: SelectionStatus,
            selected: Optional[np.ndarray]) -> SelectionResult:
    if selected is None:
        return SelectionResult(mode=mode, alpha=alpha, tau=tau, status=status, num_candidates=inst.m)
    ids = [inst.ids[j] for j in np.flatnonzero(selected)]
    excluded = [inst.ids[j] for j in np.flatnonzero(excluded_not_subsumed(selected, inst.K))]
    return SelectionResult(
        mode=mode,
        alpha=alpha,
        tau=tau,
        status=status,
        selected_ids=sorted(ids),
        excluded_not_subsumed_ids=sorted(excluded),
        coverage=set_coverage(M, labels, ids),
        ffr=set_ffr(M, labels, ids),
        objective_value=_objective(inst, selected, mode),
        num_candidates=inst.m,
    )


def solve_ilp(M: ResultMatrix, labels: Sequence[int], alpha: float, tau: float,
              mode: SelectionMode = SelectionMode.COV, K: Optional[SubsumptionMatrix] = None,
              time_limit: float = 60.0) -> Tuple[SelectionResult, Optional[IlpSolution]]:
    """
    Exact COV or SUB selection, returning the result and the solver's variable values
    """
    if mode not in (SelectionMode.COV, SelectionMode.SUB):
        raise PreconditionError(f"solve_ilp handles cov and sub, not {mode.value}")
    if mode == SelectionMode.SUB and K is None:
        raise PreconditionError("sub mode needs a subsumption matrix")
    _check_thresholds(alpha, tau)
    inst = _instance(M, labels, K)
    deadline = time.monotonic() + time_limit

    if inst.m == 0:
        empty = np.zeros(0, dtype=bool)
        status = SelectionStatus.OPTIMAL if _feasible(inst, empty, alpha, tau) else SelectionStatus.INFEASIBLE
        result = _result(inst, M, labels, mode, alpha, tau, status,
                         empty if status == SelectionStatus.OPTIMAL else None)
    else:
        model = _SelectionModel(inst, alpha, tau, with_subsumption=mode == SelectionMode.SUB)
        status, selected = _lexicographic_optimum(model, mode, alpha, tau, deadline)
        result = _result(inst, M, labels, mode, alpha, tau, status, selected)
        if status == SelectionStatus.OPTIMAL:
            solution = model.snapshot()
            logger.info("%s selection: %d of %d assertions, objective %d",
                        mode.value, len(result.selected_ids), inst.m, result.objective_value)
            return result, solution

    if result.status == SelectionStatus.INFEASIBLE:
        best = max_coverage_at_tau(M, labels, tau)
        result = result.model_copy(update={"max_coverage_at_tau": best})
        logger.warning("No selection reaches coverage %.2f with FFR <= %.2f; best coverage is %.3f",
                       alpha, tau, best)
    return result, None


def solve_cov(M: ResultMatrix, labels: Sequence[int], alpha: float, tau: float,
              K: Optional[SubsumptionMatrix] = None, time_limit: float = 60.0) -> SelectionResult:
    """Minimum-size selection meeting coverage >= alpha and FFR <= tau"""
    return solve_ilp(M, labels, alpha, tau, SelectionMode.COV, K, time_limit)[0]


def solve_sub(M: ResultMatrix, labels: Sequence[int], K: SubsumptionMatrix, alpha: float, tau: float,
              time_limit: float = 60.0) -> SelectionResult:
    """Minimum |F'| + |G| under the same coverage and FFR constraints"""
    return solve_ilp(M, labels, alpha, tau, SelectionMode.SUB, K, time_limit)[0]


def solve_baseline(M: ResultMatrix, labels: Sequence[int], tau: float,
                   K: Optional[SubsumptionMatrix] = None) -> SelectionResult:
    """Every assertion whose own FFR is within tau"""
    _check_thresholds(None, tau)
    inst = _instance(M, labels, K)
    selected = np.array(
        [single_ffr(M, labels, a) <= tau + EPSILON for a in inst.ids], dtype=bool
    )
    return _result(inst, M, labels, SelectionMode.BASELINE, None, tau, SelectionStatus.OPTIMAL, selected)


def solve_no_examples(K: SubsumptionMatrix) -> SelectionResult:
    """
    One representative (smallest id) of every source component of the implication graph
    """
    ids = K.assertion_ids
    graph = nx.DiGraph()
    graph.add_nodes_from(ids)
    graph.add_edges_from(
        (ids[r], ids[c])
        for r, row in enumerate(K.cells)
        for c, v in enumerate(row)
        if v and r != c
    )
    condensed = nx.condensation(graph)
    chosen = sorted(
        min(condensed.nodes[component]["members"])
        for component in condensed.nodes
        if condensed.in_degree(component) == 0
    )

    reached = set(chosen)
    for node in chosen:
        reached |= nx.descendants(graph, node)
    excluded = sorted(a for a in ids if a not in reached)
    return SelectionResult(
        mode=SelectionMode.NO_EXAMPLES,
        status=SelectionStatus.OPTIMAL,
        selected_ids=chosen,
        excluded_not_subsumed_ids=excluded,
        objective_value=len(chosen) + len(excluded),
        num_candidates=len(ids),
    )


def max_coverage_at_tau(M: ResultMatrix, labels: Sequence[int], tau: float,
                        time_limit: float = 60.0) -> float:
    """
    Best coverage reachable by any selection with FFR <= tau
    """
    _check_thresholds(None, tau)
    inst = _instance(M, labels, None)
    failures = inst.failure_rows
    if not failures:
        return 1.0
    if inst.m == 0:
        return 0.0
    model = _SelectionModel(inst, None, tau, with_subsumption=False)
    model.solver.Maximize(model.solver.Sum(list(model.u.values())))
    status = model.solve(time.monotonic() + time_limit)
    if status not in (pywraplp.Solver.OPTIMAL, pywraplp.Solver.FEASIBLE):
        return 0.0
    return set_coverage(M, labels, [inst.ids[j] for j in np.flatnonzero(model.selected())])


def select(M: Optional[ResultMatrix], labels: Optional[Sequence[int]], config: SelectionConfig,
           K: Optional[SubsumptionMatrix] = None) -> SelectionResult:
    """Dispatch on config.mode"""
    mode = config.mode
    if mode == SelectionMode.NO_EXAMPLES:
        if K is None:
            raise PreconditionError("no-examples mode needs a subsumption matrix")
        return solve_no_examples(K)
    if M is None or labels is None:
        raise PreconditionError(f"{mode.value} mode needs a result matrix and labels")
    if K is not None and sorted(K.assertion_ids) != sorted(M.assertion_ids):
        raise DimensionMismatchError("subsumption matrix ids do not match the result matrix")
    if mode == SelectionMode.BASELINE:
        return solve_baseline(M, labels, config.tau, K)
    if mode == SelectionMode.SUB:
        if K is None:
            raise PreconditionError("sub mode needs a subsumption matrix")
        return solve_sub(M, labels, K, config.alpha, config.tau, config.time_limit)
    return solve_cov(M, labels, config.alpha, config.tau, K, config.time_limit)
