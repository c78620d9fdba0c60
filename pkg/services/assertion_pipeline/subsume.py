"""
Subsumption - builds K from DSL proofs, LLM judgments and example refutation
"""
import logging
import re
from typing import Dict, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from . import prompts
from .engine import single_ffr
from .errors import DimensionMismatchError, GatewayError, GenerationParseError, PreconditionError
from .generate import ask_json
from .models import (
    AssertionKind,
    AssertionSpec,
    CandidateSet,
    LlmRequest,
    Operand,
    Provenance,
    Refutation,
    RequestKind,
    ResultMatrix,
    SubsumptionMatrix,
    SubsumptionSummary,
    pair_key,
)

logger = logging.getLogger(__name__)

Pair = Tuple[str, str]

_QUOTED = r"(\"[^\"]*\"|'[^']*')"
_TUPLE_PAIR = re.compile(r"\(\s*" + _QUOTED + r"\s*,\s*" + _QUOTED + r"\s*\)")


# ---------------------------------------------------------------------------
# DSL rules
# ---------------------------------------------------------------------------

def _presence_implies(x: Operand, y: Operand) -> bool:
    """Finding x in a response (under x's folding) guarantees finding y"""
    if x.field != y.field:
        return False
    if x.field:
        return x.value == y.value and (y.casefold or not x.casefold)
    if y.casefold:
        return y.value.casefold() in x.value.casefold()
    return not x.casefold and y.value in x.value


def _prefix_implies(x: Operand, y: Operand) -> bool:
    """A response starting with x also starts with y"""
    if x.field or y.field:
        return _presence_implies(x, y) and x.value == y.value
    if y.casefold:
        return x.value.casefold().startswith(y.value.casefold())
    return not x.casefold and x.value.startswith(y.value)


def _resolved_fields(a: AssertionSpec) -> Set[str]:
    """Input fields certain to have resolved whenever a passes"""
    fields = [op.value for op in a.operands if op.field]
    if a.kind in (AssertionKind.CONTAINS_ALL, AssertionKind.EXCLUDES_ALL):
        return set(fields)
    # CONTAINS_ANY always evaluates its first operand
    if a.kind in (AssertionKind.CONTAINS_ANY, AssertionKind.STARTS_WITH) and a.operands and a.operands[0].field:
        return {a.operands[0].value}
    return set()


def _any_resolves(a: AssertionSpec, B: Sequence[Operand]) -> bool:
    """Every input field B names is certain to resolve whenever a passes"""
    resolved = _resolved_fields(a)
    return all(y.value in resolved for y in B if y.field)


def _interval_within(a: AssertionSpec, b: AssertionSpec) -> bool:
    a_lo = a.min if a.min is not None else 0
    b_lo = b.min if b.min is not None else 0
    if a_lo < b_lo:
        return False
    if b.max is None:
        return True
    return a.max is not None and a.max <= b.max


def _json_shape_implies(a: AssertionSpec, shape: str) -> bool:
    """a passing guarantees the response parses as JSON of the given shape"""
    if a.kind == AssertionKind.JSON_LIST_MIN_LEN:
        return shape in ("list", "any")
    if a.kind == AssertionKind.JSON_REQUIRED_KEYS:
        return shape in ("object", "any")
    if a.kind == AssertionKind.JSON_PARSEABLE:
        return shape == "any" or a.shape == shape
    return False


def _leaf_subsumes(a: AssertionSpec, b: AssertionSpec) -> bool:
    ka, kb = a.kind, b.kind
    A, B = a.operands, b.operands

    if ka == AssertionKind.CONTAINS_ALL:
        if kb == AssertionKind.CONTAINS_ALL:
            return all(any(_presence_implies(x, y) for x in A) for y in B)
        if kb == AssertionKind.CONTAINS_ANY:
            return _any_resolves(a, B) and any(_presence_implies(x, y) for x in A for y in B)
    if ka == AssertionKind.CONTAINS_ANY:
        if kb == AssertionKind.CONTAINS_ANY:
            return _any_resolves(a, B) and all(any(_presence_implies(x, y) for y in B) for x in A)
        if kb == AssertionKind.CONTAINS_ALL:
            return all(_presence_implies(x, y) for x in A for y in B)
    if ka == AssertionKind.EXCLUDES_ALL and kb == AssertionKind.EXCLUDES_ALL:
        return all(any(_presence_implies(y, x) for x in A) for y in B)
    if ka == AssertionKind.STARTS_WITH:
        if kb == AssertionKind.STARTS_WITH:
            return _prefix_implies(A[0], B[0])
        if kb == AssertionKind.CONTAINS_ALL:
            return all(_presence_implies(A[0], y) for y in B)
        if kb == AssertionKind.CONTAINS_ANY:
            return _any_resolves(a, B) and any(_presence_implies(A[0], y) for y in B)

    if ka == kb and ka in (AssertionKind.WORD_COUNT, AssertionKind.SENTENCE_COUNT):
        return _interval_within(a, b)

    if kb == AssertionKind.JSON_PARSEABLE:
        return _json_shape_implies(a, b.shape)
    if ka == AssertionKind.JSON_LIST_MIN_LEN and kb == AssertionKind.JSON_LIST_MIN_LEN:
        return a.min >= b.min
    if ka == AssertionKind.JSON_PARSEABLE and kb == AssertionKind.JSON_LIST_MIN_LEN:
        return a.shape == "list" and b.min == 0
    if ka == AssertionKind.JSON_REQUIRED_KEYS and kb == AssertionKind.JSON_REQUIRED_KEYS:
        return set(b.keys) <= set(a.keys)
    return False


def dsl_subsumes(a: AssertionSpec, b: AssertionSpec) -> bool:
    """
    Sound structural check that a passing guarantees b passing; False when unsure
    """
    if a.structural_key() == b.structural_key():
        return True
    if b.kind == AssertionKind.ALL_OF and all(dsl_subsumes(a, c) for c in b.children):
        return True
    if b.kind == AssertionKind.ANY_OF and any(dsl_subsumes(a, c) for c in b.children):
        return True
    if a.kind == AssertionKind.ALL_OF:
        return any(dsl_subsumes(c, b) for c in a.children)
    if a.kind == AssertionKind.ANY_OF:
        return all(dsl_subsumes(c, b) for c in a.children)
    if b.kind in (AssertionKind.ALL_OF, AssertionKind.ANY_OF):
        return False
    return _leaf_subsumes(a, b)


def dsl_pairs(candidates: CandidateSet) -> List[Pair]:
    specs = [(c.id, c.spec) for c in candidates.candidates]
    return [
        (i, j)
        for i, a in specs
        for j, b in specs
        if i != j and dsl_subsumes(a, b)
    ]


# ---------------------------------------------------------------------------
# LLM judgments
# ---------------------------------------------------------------------------

def normalize_pair_syntax(text: str) -> str:
    """Rewrite ("a", "b") tuples as JSON arrays"""
    def to_array(match: re.Match) -> str:
        left, right = (g[1:-1].replace('"', '\\"') for g in match.groups())
        return f'["{left}", "{right}"]'
    return _TUPLE_PAIR.sub(to_array, text)


class _PairReplyGateway:
    """Applies tuple normalization to every reply of the formatting call"""

    def __init__(self, gateway):
        self._gateway = gateway

    def complete(self, request):
        response = self._gateway.complete(request)
        return response.model_copy(update={"text": normalize_pair_syntax(response.text)})


def llm_subsumption_pairs(candidates: CandidateSet, gateway,
                          summary: Optional[SubsumptionSummary] = None) -> List[Pair]:
    """
    Pairs (i, j) the model judges as {f_i} implies f_j; two calls in total
    """
    if len(candidates.candidates) < 2:
        raise PreconditionError("subsumption needs at least two candidates")

    described = [f"{c.id}: {c.spec.describe()}" for c in candidates.candidates]
    listing = gateway.complete(LlmRequest(
        user_text=prompts.render_subsume_list(described),
        temperature=gateway.generation_temperature,
        request_kind=RequestKind.SUBSUME_LIST,
    )).text

    try:
        raw = ask_json(_PairReplyGateway(gateway), LlmRequest(
            user_text=prompts.render_subsume_format(listing),
            temperature=0.0,
            request_kind=RequestKind.SUBSUME_FORMAT,
        ))
    except GenerationParseError as e:
        logger.warning("Subsumption pairs unparseable, continuing with DSL rules only: %s", e)
        if summary is not None:
            summary.llm_status = "parse_failed"
        return []

    known = set(candidates.ids)
    pairs: List[Pair] = []
    dropped = 0
    for item in raw:
        if not (isinstance(item, (list, tuple)) and len(item) == 2 and all(isinstance(v, str) for v in item)):
            dropped += 1
            continue
        i, j = item
        if i not in known or j not in known:
            logger.warning("Dropping subsumption pair with unknown id: %s -> %s", i, j)
            dropped += 1
            continue
        if i == j:
            dropped += 1
            continue
        if (i, j) not in pairs:
            pairs.append((i, j))

    if summary is not None:
        summary.llm_pairs_proposed = len(raw)
        summary.llm_pairs_dropped = dropped
        summary.llm_status = "ok"
    return pairs


# ---------------------------------------------------------------------------
# Example-based pruning
# ---------------------------------------------------------------------------

def refutation_witness(i: str, j: str, M: ResultMatrix) -> Optional[str]:
    """Id of the first example where f_i passes and f_j fails"""
    ci, cj = M.column_index(i), M.column_index(j)
    for example_id, row in zip(M.example_ids, M.cells):
        if row[ci] == 1 and row[cj] == 0:
            return example_id
    return None


def prune_pair_by_examples(i: str, j: str, M: ResultMatrix) -> bool:
    """True when some example shows {f_i} does not imply f_j"""
    return refutation_witness(i, j, M) is not None


def ffr_skip_set(M: ResultMatrix, labels: Sequence[int], tau: float) -> Set[str]:
    """Assertions whose own FFR is positive and at least tau"""
    if not 0.0 <= tau <= 1.0:
        raise PreconditionError(f"tau must be in [0, 1], got {tau}")
    ffrs = {a: single_ffr(M, labels, a) for a in M.assertion_ids}
    return {a for a, ffr in ffrs.items() if ffr > 0 and ffr >= tau}


# ---------------------------------------------------------------------------
# Closure and assembly
# ---------------------------------------------------------------------------

def transitive_closure(K: SubsumptionMatrix) -> SubsumptionMatrix:
    """Reachability closure; new cells are marked TRANSITIVE"""
    ids = K.assertion_ids
    graph = nx.DiGraph()
    graph.add_nodes_from(ids)
    graph.add_edges_from(
        (ids[r], ids[c])
        for r, row in enumerate(K.cells)
        for c, v in enumerate(row)
        if v and r != c
    )
    closed = nx.transitive_closure(graph, reflexive=None)

    index = {a: k for k, a in enumerate(ids)}
    cells = [list(row) for row in K.cells]
    provenance = dict(K.provenance)
    for u, v in closed.edges():
        if u == v:
            continue
        r, c = index[u], index[v]
        if not cells[r][c]:
            cells[r][c] = 1
            provenance[pair_key(u, v)] = Provenance.TRANSITIVE
    for k in range(len(ids)):
        cells[k][k] = 1
    return SubsumptionMatrix(assertion_ids=list(ids), cells=cells, provenance=provenance)


def build_subsumption_matrix(candidates: CandidateSet, M: ResultMatrix, labels: Sequence[int],
                             tau: float, gateway=None,
                             summary: Optional[SubsumptionSummary] = None) -> SubsumptionMatrix:
    """
    DSL pairs, LLM pairs outside the FFR skip set, refutation, union, closure
    """
    if candidates.ids != M.assertion_ids:
        raise DimensionMismatchError("candidate ids do not match the result matrix columns")
    summary = summary if summary is not None else SubsumptionSummary()
    ids = candidates.ids

    proven = dsl_pairs(candidates)
    for i, j in proven:
        witness = refutation_witness(i, j, M)
        if witness is not None:
            alarm = f"DSL rule {i} -> {j} contradicted by example {witness}"
            logger.error(alarm)
            summary.consistency_alarms.append(alarm)

    skip = ffr_skip_set(M, labels, tau)
    summary.skipped_for_ffr = sorted(skip)
    eligible = CandidateSet(candidates=[c for c in candidates.candidates if c.id not in skip])

    llm: List[Pair] = []
    if gateway is None:
        summary.llm_status = "disabled"
    elif len(eligible.candidates) < 2:
        summary.llm_status = "skipped"
    else:
        try:
            llm = llm_subsumption_pairs(eligible, gateway, summary)
        except GatewayError as e:
            logger.warning("LLM subsumption unavailable, continuing with DSL rules only: %s", e)
            summary.llm_status = f"failed: {type(e).__name__}"

    proven_set = set(proven)
    accepted: List[Pair] = []
    for i, j in llm:
        if (i, j) in proven_set:
            continue
        witness = refutation_witness(i, j, M)
        if witness is not None:
            logger.info("Refuted %s -> %s on example %s", i, j, witness)
            summary.refutations.append(Refutation(subsumer=i, subsumed=j, witness_example_id=witness))
            continue
        accepted.append((i, j))

    K = SubsumptionMatrix.from_edges(ids, proven, Provenance.DSL_RULE)
    index = {a: k for k, a in enumerate(ids)}
    for i, j in accepted:
        K.cells[index[i]][index[j]] = 1
        K.provenance[pair_key(i, j)] = Provenance.LLM

    K = transitive_closure(K)
    summary.provenance_counts = K.provenance_counts()
    return K


def subsumption_array(K: SubsumptionMatrix, assertion_ids: Sequence[str]) -> np.ndarray:
    """K as a numpy array in the given column order"""
    if sorted(K.assertion_ids) != sorted(assertion_ids):
        raise DimensionMismatchError("subsumption matrix ids do not match the result matrix")
    order = [K.assertion_ids.index(a) for a in assertion_ids]
    cells = np.asarray(K.cells, dtype=np.int8)
    return cells[np.ix_(order, order)]
