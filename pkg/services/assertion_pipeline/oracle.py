"""
Exhaustive selection oracle for small instances, independent of the ILP machinery
"""
from typing import List, Optional, Sequence, Tuple

from .engine import set_coverage, set_ffr, single_ffr
from .errors import DimensionMismatchError, PreconditionError, TooLargeError
from .models import ResultMatrix, SelectionMode, SelectionResult, SelectionStatus, SubsumptionMatrix

MAX_ORACLE_ASSERTIONS = 20
EPSILON = 1e-9


def _bits(mask: int, m: int) -> List[int]:
    return [k for k in range(m) if mask >> k & 1]


def brute_force_oracle(M: Optional[ResultMatrix], labels: Optional[Sequence[int]],
                       K: Optional[SubsumptionMatrix] = None, alpha: float = 0.0, tau: float = 1.0,
                       mode: SelectionMode = SelectionMode.COV) -> SelectionResult:
    """
    Best selection over all 2^m subsets, scored straight from the coverage, FFR and
    subsumption definitions; ties go to the smallest sorted id list
    """
    if mode == SelectionMode.NO_EXAMPLES:
        if K is None:
            raise PreconditionError("no-examples mode needs a subsumption matrix")
        ids = sorted(K.assertion_ids)
    else:
        if M is None or labels is None:
            raise PreconditionError(f"{mode.value} mode needs a result matrix and labels")
        if len(labels) != len(M.example_ids):
            raise DimensionMismatchError(f"{len(labels)} labels for {len(M.example_ids)} examples")
        ids = sorted(M.assertion_ids)
    if mode == SelectionMode.SUB and K is None:
        raise PreconditionError("sub mode needs a subsumption matrix")
    m = len(ids)
    if m > MAX_ORACLE_ASSERTIONS:
        raise TooLargeError(f"oracle enumerates 2^m subsets; m={m} exceeds {MAX_ORACLE_ASSERTIONS}")

    if mode == SelectionMode.BASELINE:
        chosen = [a for a in ids if single_ffr(M, labels, a) <= tau + EPSILON]
        return _as_result(M, labels, K, ids, chosen, mode, None, tau, len(chosen))

    # bit k of a mask stands for ids[k]; bit i of a row mask for example i
    flag_rows = [0] * m
    failures = goods = 0
    if mode != SelectionMode.NO_EXAMPLES:
        for k, a in enumerate(ids):
            col = M.column_index(a)
            for i, row in enumerate(M.cells):
                if row[col] == 0:
                    flag_rows[k] |= 1 << i
        for i, y in enumerate(labels):
            if int(y) == 0:
                failures |= 1 << i
            else:
                goods |= 1 << i
    n_fail, n_good = bin(failures).count("1"), bin(goods).count("1")

    implied_by = [0] * m
    if K is not None:
        for k, f in enumerate(ids):
            for t, s in enumerate(ids):
                if s != f and K.implies(s, f):
                    implied_by[k] |= 1 << t

    best: Optional[Tuple[int, List[int]]] = None
    for mask in range(1 << m):
        if mode != SelectionMode.NO_EXAMPLES:
            flagged = 0
            for k in _bits(mask, m):
                flagged |= flag_rows[k]
            coverage = bin(flagged & failures).count("1") / n_fail if n_fail else 1.0
            ffr = bin(flagged & goods).count("1") / n_good if n_good else 0.0
            if coverage < alpha - EPSILON or ffr > tau + EPSILON:
                continue
        objective = bin(mask).count("1")
        if mode in (SelectionMode.SUB, SelectionMode.NO_EXAMPLES):
            objective += sum(
                1 for k in range(m)
                if not mask >> k & 1 and not implied_by[k] & mask
            )
        if best is not None and objective > best[0]:
            continue
        key = (objective, _bits(mask, m))
        if best is None or key < best:
            best = key

    if best is None:
        return SelectionResult(
            mode=mode, alpha=alpha, tau=tau, status=SelectionStatus.INFEASIBLE, num_candidates=m
        )
    objective, chosen_bits = best
    chosen = [ids[k] for k in chosen_bits]
    if mode == SelectionMode.NO_EXAMPLES:
        return SelectionResult(
            mode=mode,
            status=SelectionStatus.OPTIMAL,
            selected_ids=chosen,
            excluded_not_subsumed_ids=_excluded(ids, chosen, K),
            objective_value=objective,
            num_candidates=m,
        )
    return _as_result(M, labels, K, ids, chosen, mode, alpha, tau, objective)


def _excluded(ids: List[str], chosen: Sequence[str], K: Optional[SubsumptionMatrix]) -> List[str]:
    chosen_set = set(chosen)
    return [
        f for f in ids
        if f not in chosen_set and not (K is not None and any(K.implies(s, f) for s in chosen))
    ]


def _as_result(M, labels, K, ids, chosen, mode, alpha, tau, objective) -> SelectionResult:
    return SelectionResult(
        mode=mode,
        alpha=alpha,
        tau=tau,
        status=SelectionStatus.OPTIMAL,
        selected_ids=chosen,
        excluded_not_subsumed_ids=_excluded(ids, chosen, K),
        coverage=set_coverage(M, labels, chosen),
        ffr=set_ffr(M, labels, chosen),
        objective_value=objective,
        num_candidates=len(ids),
    )
