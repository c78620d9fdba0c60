"""
Artifact files - JSON loaders and writers for every stage boundary
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, Type, TypeVar, Union

from pydantic import BaseModel
from pydantic import ValidationError as SchemaError

from .errors import ParseError
from .models import CandidateSet, ExampleSet, ResultMatrix, RunConfig, SelectionResult, SubsumptionMatrix

PathLike = Union[str, Path]
ModelT = TypeVar("ModelT", bound=BaseModel)


def read_json(path: PathLike) -> Any:
    """Read a UTF-8 JSON file, raising ParseError that names the path"""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"File not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: invalid JSON ({e})") from e


def write_json(path: PathLike, data: Any) -> Path:
    """
    Write JSON atomically; output is byte-stable for identical data
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
        f.write("\n")
    os.replace(tmp, path)
    return path


def load_model(path: PathLike, model: Type[ModelT]) -> ModelT:
    raw = read_json(path)
    try:
        return model.model_validate(raw)
    except SchemaError as e:
        raise ParseError(f"{path}: {e}") from e


def load_examples(path: PathLike) -> ExampleSet:
    return load_model(path, ExampleSet)


def load_candidates(path: PathLike) -> CandidateSet:
    return load_model(path, CandidateSet)


def save_candidates(path: PathLike, candidates: CandidateSet) -> Path:
    return write_json(path, candidates.model_dump(mode="json", exclude_defaults=True))


def load_matrix(path: PathLike) -> ResultMatrix:
    return load_model(path, ResultMatrix)


def save_matrix(path: PathLike, matrix: ResultMatrix) -> Path:
    return write_json(path, matrix.model_dump(mode="json"))


def load_subsumption(path: PathLike) -> SubsumptionMatrix:
    return load_model(path, SubsumptionMatrix)


def save_subsumption(path: PathLike, matrix: SubsumptionMatrix) -> Path:
    data = matrix.model_dump(mode="json")
    data["provenance"] = dict(sorted(data["provenance"].items()))
    return write_json(path, data)


def selection_to_dict(result: SelectionResult) -> Dict[str, Any]:
    return {
        "mode": result.mode.value,
        "alpha": result.alpha,
        "tau": result.tau,
        "status": result.status.value,
        "selected": list(result.selected_ids),
        "excluded_not_subsumed": list(result.excluded_not_subsumed_ids),
        "coverage": result.coverage,
        "ffr": result.ffr,
        "objective": result.objective_value,
        "num_candidates": result.num_candidates,
        "diagnostics": {"max_coverage_at_tau": result.max_coverage_at_tau},
    }


def save_selection(path: PathLike, result: SelectionResult) -> Path:
    return write_json(path, selection_to_dict(result))


def load_selection(path: PathLike) -> SelectionResult:
    raw = read_json(path)
    try:
        return SelectionResult(
            mode=raw["mode"],
            alpha=raw.get("alpha"),
            tau=raw.get("tau"),
            status=raw["status"],
            selected_ids=raw.get("selected", []),
            excluded_not_subsumed_ids=raw.get("excluded_not_subsumed", []),
            coverage=raw.get("coverage"),
            ffr=raw.get("ffr"),
            objective_value=raw.get("objective", 0),
            num_candidates=raw.get("num_candidates", 0),
            max_coverage_at_tau=(raw.get("diagnostics") or {}).get("max_coverage_at_tau"),
        )
    except (KeyError, TypeError, SchemaError) as e:
        raise ParseError(f"{path}: malformed selection file ({e})") from e


def load_run_config(path: PathLike) -> RunConfig:
    return load_model(path, RunConfig)
