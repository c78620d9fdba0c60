"""
Assertion Engine - evaluates DSL specs over labeled examples and scores selections
"""
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from .errors import DimensionMismatchError, PreconditionError
from .history import segment_sentences
from .models import (
    AssertionKind,
    AssertionSpec,
    CandidateSet,
    EvaluationError,
    ExampleRun,
    ExampleSet,
    Operand,
    ResultMatrix,
)

logger = logging.getLogger(__name__)


class _UnresolvedField(Exception):
    pass


def _resolve(op: Operand, example: ExampleRun) -> str:
    if not op.field:
        return op.value
    if op.value not in example.input:
        raise _UnresolvedField(f"example {example.id} has no input field {op.value!r}")
    return example.input[op.value]


def _present(op: Operand, example: ExampleRun) -> bool:
    needle = _resolve(op, example)
    if op.casefold:
        return needle.casefold() in example.response.casefold()
    return needle in example.response


def _within(count: int, spec: AssertionSpec) -> bool:
    if spec.min is not None and count < spec.min:
        return False
    if spec.max is not None and count > spec.max:
        return False
    return True


def _parse_json(response: str) -> Any:
    try:
        return json.loads(response.strip())
    except ValueError:
        return None


def _check(spec: AssertionSpec, example: ExampleRun, gateway, errors: Optional[List[EvaluationError]],
           assertion_id: str) -> bool:
    """Raw semantics; may raise on field, regex or gateway errors"""
    kind = spec.kind
    response = example.response

    if kind == AssertionKind.CONTAINS_ALL:
        return all(_present(op, example) for op in spec.operands)
    if kind == AssertionKind.CONTAINS_ANY:
        return any(_present(op, example) for op in spec.operands)
    if kind == AssertionKind.EXCLUDES_ALL:
        return not any(_present(op, example) for op in spec.operands)
    if kind == AssertionKind.STARTS_WITH:
        op = spec.operands[0]
        prefix = _resolve(op, example)
        text = response.lstrip()
        if op.casefold:
            return text.casefold().startswith(prefix.casefold())
        return text.startswith(prefix)
    if kind == AssertionKind.REGEX_MATCH:
        op = spec.operands[0]
        flags = re.IGNORECASE if op.casefold else 0
        return re.search(op.value, response, flags) is not None
    if kind == AssertionKind.WORD_COUNT:
        return _within(len(response.split()), spec)
    if kind == AssertionKind.SENTENCE_COUNT:
        return _within(len(segment_sentences(response)), spec)

    if kind == AssertionKind.JSON_PARSEABLE:
        if spec.shape == "any":
            try:
                json.loads(response.strip())
            except ValueError:
                return False
            return True
        value = _parse_json(response)
        return isinstance(value, list if spec.shape == "list" else dict)
    if kind == AssertionKind.JSON_LIST_MIN_LEN:
        value = _parse_json(response)
        return isinstance(value, list) and len(value) >= spec.min
    if kind == AssertionKind.JSON_REQUIRED_KEYS:
        value = _parse_json(response)
        return isinstance(value, dict) and all(k in value for k in spec.keys)

    if kind == AssertionKind.LLM_QUESTION:
        if gateway is None:
            raise PreconditionError("LLM_QUESTION needs a gateway")
        return all(
            gateway.ask_boolean(example.formatted_prompt, response, question)
            for question in spec.questions
        )

    # Children follow the error-is-failure rule individually
    results = (_evaluate(child, example, gateway, errors, assertion_id) for child in spec.children)
    if kind == AssertionKind.ALL_OF:
        return all(results)
    return any(results)


def _evaluate(spec: AssertionSpec, example: ExampleRun, gateway,
              errors: Optional[List[EvaluationError]], assertion_id: str) -> bool:
    try:
        return _check(spec, example, gateway, errors, assertion_id)
    except Exception as e:  # any runtime error counts as a failure
        logger.debug("Assertion %s errored on %s: %s", assertion_id, example.id, e)
        if errors is not None:
            errors.append(EvaluationError(
                assertion_id=assertion_id,
                example_id=example.id,
                kind=type(e).__name__.lstrip("_"),
                message=str(e),
            ))
        return False


def evaluate_assertion(spec: AssertionSpec, example: ExampleRun, gateway=None,
                       errors: Optional[List[EvaluationError]] = None) -> int:
    """
    f(e) in {0, 1}. Errors never propagate: they yield 0 and are appended to errors
    """
    return int(_evaluate(spec, example, gateway, errors, spec.id))


def build_result_matrix(candidates: CandidateSet, examples: ExampleSet, gateway=None,
                        workers: int = 4, errors: Optional[List[EvaluationError]] = None,
                        progress: bool = False) -> ResultMatrix:
    """
    M with cell(i, j) = f_j(e_i); rows follow examples, columns follow candidates
    """
    if not candidates.candidates:
        raise PreconditionError("cannot build a result matrix without candidates")
    if not examples.examples:
        raise PreconditionError("cannot build a result matrix without examples")

    n, m = len(examples.examples), len(candidates.candidates)
    cells = np.zeros((n, m), dtype=np.int8)
    cell_errors: Dict[tuple, List[EvaluationError]] = {}

    def run(i: int, j: int) -> None:
        candidate = candidates.candidates[j]
        local: List[EvaluationError] = []
        cells[i, j] = int(_evaluate(candidate.spec, examples.examples[i], gateway, local, candidate.id))
        if local:
            cell_errors[(i, j)] = local

    jobs = [(i, j) for i in range(n) for j in range(m)]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(run, i, j) for i, j in jobs]
        for future in tqdm(futures, desc="Evaluating assertions", disable=not progress):
            future.result()

    if errors is not None:
        for key in sorted(cell_errors):
            errors.extend(cell_errors[key])
    if cell_errors:
        logger.info("%d cells hit evaluation errors and were recorded as failures", len(cell_errors))

    return ResultMatrix(
        example_ids=examples.ids,
        assertion_ids=candidates.ids,
        cells=cells.tolist(),
    )


# ---------------------------------------------------------------------------
# Coverage and false failure rate
# ---------------------------------------------------------------------------

def label_vector(M: ResultMatrix, labels: Sequence[int]) -> np.ndarray:
    y = np.asarray(list(labels), dtype=np.int8)
    if y.shape != (len(M.example_ids),):
        raise DimensionMismatchError(
            f"{len(y)} labels for a matrix with {len(M.example_ids)} examples"
        )
    return y


def predicted_pass(M: ResultMatrix, selected: Iterable[str]) -> np.ndarray:
    """ŷ_i: True iff every selected assertion passes example i"""
    columns = [M.column_index(a) for a in selected]
    cells = np.asarray(M.cells, dtype=bool).reshape(len(M.example_ids), len(M.assertion_ids))
    if not columns:
        return np.ones(len(M.example_ids), dtype=bool)
    return cells[:, columns].all(axis=1)


def set_coverage(M: ResultMatrix, labels: Sequence[int], selected: Iterable[str]) -> float:
    """Fraction of BAD examples flagged by the conjunction; 1 when there are none"""
    y = label_vector(M, labels)
    flagged = ~predicted_pass(M, selected)
    failures = y == 0
    if not failures.any():
        return 1.0
    return float((flagged & failures).sum() / failures.sum())


def set_ffr(M: ResultMatrix, labels: Sequence[int], selected: Iterable[str]) -> float:
    """Fraction of GOOD examples flagged by the conjunction; 0 when there are none"""
    y = label_vector(M, labels)
    flagged = ~predicted_pass(M, selected)
    goods = y == 1
    if not goods.any():
        return 0.0
    return float((flagged & goods).sum() / goods.sum())


def single_ffr(M: ResultMatrix, labels: Sequence[int], assertion_id: str) -> float:
    return set_ffr(M, labels, [assertion_id])


def metrics_table(M: ResultMatrix, labels: Sequence[int]) -> List[Dict[str, Any]]:
    """Per-assertion single FFR and number of failures caught"""
    y = label_vector(M, labels)
    cells = np.asarray(M.cells, dtype=np.int8).reshape(len(M.example_ids), len(M.assertion_ids))
    rows = []
    for j, assertion_id in enumerate(M.assertion_ids):
        flags = cells[:, j] == 0
        rows.append({
            "assertion_id": assertion_id,
            "single_ffr": single_ffr(M, labels, assertion_id),
            "failures_caught": int((flags & (y == 0)).sum()),
        })
    return rows
