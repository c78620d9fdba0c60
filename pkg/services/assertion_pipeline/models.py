"""
Pydantic models for the assertion pipeline
"""
import json
import re
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import UnknownAssertionError

# Brace groups holding whitespace (or nothing) are literal text, not placeholders
PLACEHOLDER_RE = re.compile(r"\{([^\s{}]+)\}")

MAX_SPEC_DEPTH = 3
MAX_LLM_QUESTIONS = 2


# ---------------------------------------------------------------------------
# Prompt history
# ---------------------------------------------------------------------------

class PromptTemplate(BaseModel):
    """One version of a prompt template"""
    text: str = Field("", description="Template text with {placeholder} fields")
    version_index: int = Field(..., ge=0, description="0 is the empty template")

    @model_validator(mode="after")
    def _base_version_is_empty(self) -> "PromptTemplate":
        if self.version_index == 0 and self.text != "":
            raise ValueError("version 0 is the empty template and must have empty text")
        return self

    @property
    def placeholders(self) -> List[str]:
        seen: List[str] = []
        for name in PLACEHOLDER_RE.findall(self.text):
            if name not in seen:
                seen.append(name)
        return seen


class PromptVersionHistory(BaseModel):
    """Versions P_0..P_k of one prompt template"""
    versions: List[PromptTemplate]

    @model_validator(mode="after")
    def _consecutive(self) -> "PromptVersionHistory":
        if len(self.versions) < 2:
            raise ValueError("a history needs at least 2 versions")
        for expected, version in enumerate(self.versions):
            if version.version_index != expected:
                raise ValueError(
                    f"version indices must be 0..k consecutive, found {version.version_index} at position {expected}"
                )
        return self

    @property
    def final(self) -> PromptTemplate:
        return self.versions[-1]


class DeltaTag(str, Enum):
    ADDED = "ADDED"
    DELETED = "DELETED"


class DeltaEntry(BaseModel):
    """A tagged sentence; position indexes prev (DELETED) or next (ADDED)"""
    tag: DeltaTag
    sentence: str
    position: int = Field(0, ge=0)

    @field_validator("sentence")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("delta sentences cannot be empty")
        return value


class PromptDelta(BaseModel):
    """Sentence-level diff between two consecutive versions"""
    from_version: int = Field(..., ge=0)
    to_version: int = Field(..., ge=1)
    entries: List[DeltaEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _consecutive(self) -> "PromptDelta":
        if self.to_version != self.from_version + 1:
            raise ValueError("to_version must equal from_version + 1")
        return self

    @property
    def added(self) -> List[DeltaEntry]:
        return [e for e in self.entries if e.tag == DeltaTag.ADDED]

    @property
    def deleted(self) -> List[DeltaEntry]:
        return [e for e in self.entries if e.tag == DeltaTag.DELETED]

    def render(self) -> str:
        """The "+ sentence" / "- sentence" form shown to the model"""
        marks = {DeltaTag.ADDED: "+", DeltaTag.DELETED: "-"}
        return "\n".join(f"{marks[e.tag]} {e.sentence}" for e in self.entries)


# ---------------------------------------------------------------------------
# LLM gateway
# ---------------------------------------------------------------------------

class RequestKind(str, Enum):
    CATEGORIZE = "CATEGORIZE"
    SYNTHESIZE = "SYNTHESIZE"
    SUBSUME_LIST = "SUBSUME_LIST"
    SUBSUME_FORMAT = "SUBSUME_FORMAT"
    ASK_BOOLEAN = "ASK_BOOLEAN"


DETERMINISTIC_KINDS = (RequestKind.ASK_BOOLEAN, RequestKind.SUBSUME_FORMAT)


class LlmRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    system_text: str = ""
    user_text: str
    temperature: float = Field(0.0, ge=0.0, le=1.0)
    request_kind: RequestKind

    @field_validator("user_text")
    @classmethod
    def _user_text_present(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("user_text cannot be empty")
        return value

    @model_validator(mode="after")
    def _judgments_are_deterministic(self) -> "LlmRequest":
        if self.request_kind in DETERMINISTIC_KINDS and self.temperature != 0:
            raise ValueError(f"{self.request_kind.value} requests must use temperature 0")
        return self


class LlmResponse(BaseModel):
    text: str
    cached: bool = False


class GatewayMode(str, Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


# ---------------------------------------------------------------------------
# Taxonomy
# ---------------------------------------------------------------------------

class CategoryName(str, Enum):
    RESPONSE_FORMAT = "RESPONSE_FORMAT"
    EXAMPLE_DEMONSTRATION = "EXAMPLE_DEMONSTRATION"
    PROMPT_CLARIFICATION = "PROMPT_CLARIFICATION"
    WORKFLOW_DESCRIPTION = "WORKFLOW_DESCRIPTION"
    DATA_INTEGRATION = "DATA_INTEGRATION"
    COUNT = "COUNT"
    INCLUSION = "INCLUSION"
    EXCLUSION = "EXCLUSION"
    QUALITATIVE = "QUALITATIVE"
    OTHER = "OTHER"


class CategoryGroup(str, Enum):
    STRUCTURAL = "STRUCTURAL"
    CONTENT_BASED = "CONTENT_BASED"


CATEGORY_GROUPS: Dict[CategoryName, CategoryGroup] = {
    CategoryName.RESPONSE_FORMAT: CategoryGroup.STRUCTURAL,
    CategoryName.EXAMPLE_DEMONSTRATION: CategoryGroup.STRUCTURAL,
    CategoryName.PROMPT_CLARIFICATION: CategoryGroup.CONTENT_BASED,
    CategoryName.WORKFLOW_DESCRIPTION: CategoryGroup.CONTENT_BASED,
    CategoryName.DATA_INTEGRATION: CategoryGroup.CONTENT_BASED,
    CategoryName.COUNT: CategoryGroup.CONTENT_BASED,
    CategoryName.INCLUSION: CategoryGroup.CONTENT_BASED,
    CategoryName.EXCLUSION: CategoryGroup.CONTENT_BASED,
    CategoryName.QUALITATIVE: CategoryGroup.CONTENT_BASED,
}


class DeltaCategory(BaseModel):
    name: CategoryName
    group: CategoryGroup = CategoryGroup.CONTENT_BASED

    @model_validator(mode="after")
    def _group_matches(self) -> "DeltaCategory":
        fixed = CATEGORY_GROUPS.get(self.name)
        if fixed is not None and fixed != self.group:
            raise ValueError(f"{self.name.value} belongs to {fixed.value}")
        return self

    @classmethod
    def of(cls, name: CategoryName) -> "DeltaCategory":
        return cls(name=name, group=CATEGORY_GROUPS.get(name, CategoryGroup.CONTENT_BASED))


class CriterionConcept(BaseModel):
    """A natural-language check derived from a prompt delta"""
    concept: str = Field(..., min_length=1)
    category: DeltaCategory
    source: str = Field(..., min_length=1)
    delta_version: int = Field(..., ge=1)
    unsourced: bool = Field(False, description="source was not found in the delta")


# ---------------------------------------------------------------------------
# Assertion DSL
# ---------------------------------------------------------------------------

class AssertionKind(str, Enum):
    CONTAINS_ALL = "CONTAINS_ALL"
    CONTAINS_ANY = "CONTAINS_ANY"
    EXCLUDES_ALL = "EXCLUDES_ALL"
    STARTS_WITH = "STARTS_WITH"
    REGEX_MATCH = "REGEX_MATCH"
    WORD_COUNT = "WORD_COUNT"
    SENTENCE_COUNT = "SENTENCE_COUNT"
    JSON_PARSEABLE = "JSON_PARSEABLE"
    JSON_LIST_MIN_LEN = "JSON_LIST_MIN_LEN"
    JSON_REQUIRED_KEYS = "JSON_REQUIRED_KEYS"
    LLM_QUESTION = "LLM_QUESTION"
    ALL_OF = "ALL_OF"
    ANY_OF = "ANY_OF"


TEXT_KINDS = (
    AssertionKind.CONTAINS_ALL,
    AssertionKind.CONTAINS_ANY,
    AssertionKind.EXCLUDES_ALL,
)
COUNT_KINDS = (AssertionKind.WORD_COUNT, AssertionKind.SENTENCE_COUNT)
COMBINATOR_KINDS = (AssertionKind.ALL_OF, AssertionKind.ANY_OF)


class Operand(BaseModel):
    """A literal string, or the name of a field of the example input"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    value: str
    field: bool = Field(False, description="value names an example input field")
    casefold: bool = Field(False, description="compare case-insensitively")


JsonShape = Literal["any", "list", "object"]


class AssertionSpec(BaseModel):
    """A structured, evaluable predicate over (example, prompt, response)"""
    model_config = ConfigDict(extra="forbid")

    id: str = ""
    kind: AssertionKind
    operands: List[Operand] = Field(default_factory=list)
    min: Optional[int] = None
    max: Optional[int] = None
    keys: List[str] = Field(default_factory=list)
    shape: JsonShape = "any"
    questions: List[str] = Field(default_factory=list)
    children: List["AssertionSpec"] = Field(default_factory=list)
    description: str = ""

    @model_validator(mode="after")
    def _kind_payload(self) -> "AssertionSpec":
        kind = self.kind
        if kind in TEXT_KINDS and not self.operands:
            raise ValueError(f"{kind.value} needs at least one operand")
        if kind in (AssertionKind.STARTS_WITH, AssertionKind.REGEX_MATCH) and len(self.operands) != 1:
            raise ValueError(f"{kind.value} takes exactly one operand")
        if kind == AssertionKind.REGEX_MATCH and self.operands[0].field:
            raise ValueError("REGEX_MATCH patterns must be literals")
        if kind in COUNT_KINDS:
            if self.min is None and self.max is None:
                raise ValueError(f"{kind.value} needs min or max")
            if any(b is not None and b < 0 for b in (self.min, self.max)):
                raise ValueError("count bounds must be >= 0")
            if self.min is not None and self.max is not None and self.min > self.max:
                raise ValueError("min must not exceed max")
        if kind == AssertionKind.JSON_LIST_MIN_LEN and (self.min is None or self.min < 0):
            raise ValueError("JSON_LIST_MIN_LEN needs min >= 0")
        if kind == AssertionKind.JSON_REQUIRED_KEYS and not self.keys:
            raise ValueError("JSON_REQUIRED_KEYS needs at least one key")
        if kind == AssertionKind.LLM_QUESTION:
            if not 1 <= len(self.questions) <= MAX_LLM_QUESTIONS:
                raise ValueError("LLM_QUESTION takes one or two questions")
            if any(not q.strip() for q in self.questions):
                raise ValueError("questions cannot be empty")
        if kind in COMBINATOR_KINDS:
            if not self.children:
                raise ValueError(f"{kind.value} needs at least one child")
            if self.depth() > MAX_SPEC_DEPTH:
                raise ValueError(f"nesting depth exceeds {MAX_SPEC_DEPTH}")
        return self

    def depth(self) -> int:
        if not self.children:
            return 1
        return 1 + max(child.depth() for child in self.children)

    def structure(self) -> Dict[str, Any]:
        """Payload without ids and descriptions, at every level"""
        data = self.model_dump(mode="json", exclude={"id", "description", "children"})
        data["children"] = [child.structure() for child in self.children]
        return data

    def structural_key(self) -> str:
        return json.dumps(self.structure(), sort_keys=True)

    def describe(self) -> str:
        """Readable rule text, used in subsumption prompts and CLI output"""
        kind = self.kind

        def operand_text(op: Operand) -> str:
            text = f"field {op.value}" if op.field else repr(op.value)
            return f"{text} (ignoring case)" if op.casefold else text

        ops = ", ".join(operand_text(op) for op in self.operands)
        if kind == AssertionKind.CONTAINS_ALL:
            return f"response contains all of: {ops}"
        if kind == AssertionKind.CONTAINS_ANY:
            return f"response contains at least one of: {ops}"
        if kind == AssertionKind.EXCLUDES_ALL:
            return f"response contains none of: {ops}"
        if kind == AssertionKind.STARTS_WITH:
            return f"response starts with {ops}"
        if kind == AssertionKind.REGEX_MATCH:
            return f"response matches the regular expression {ops}"
        if kind in COUNT_KINDS:
            unit = "words" if kind == AssertionKind.WORD_COUNT else "sentences"
            if self.min is not None and self.max is not None:
                return f"response has between {self.min} and {self.max} {unit}"
            if self.min is not None:
                return f"response has at least {self.min} {unit}"
            return f"response has at most {self.max} {unit}"
        if kind == AssertionKind.JSON_PARSEABLE:
            shape = "JSON" if self.shape == "any" else f"a JSON {self.shape}"
            return f"response parses as {shape}"
        if kind == AssertionKind.JSON_LIST_MIN_LEN:
            return f"response parses as a JSON list with at least {self.min} items"
        if kind == AssertionKind.JSON_REQUIRED_KEYS:
            return f"response parses as a JSON object with keys {', '.join(self.keys)}"
        if kind == AssertionKind.LLM_QUESTION:
            return "an LLM answers yes to: " + " AND ".join(repr(q) for q in self.questions)
        joiner = " AND " if kind == AssertionKind.ALL_OF else " OR "
        return "(" + joiner.join(child.describe() for child in self.children) + ")"


# ---------------------------------------------------------------------------
# Examples and candidates
# ---------------------------------------------------------------------------

class ExampleLabel(IntEnum):
    BAD = 0
    GOOD = 1


class ExampleRun(BaseModel):
    """One labeled pipeline run"""
    id: str = Field(..., min_length=1)
    input: Dict[str, str] = Field(default_factory=dict)
    formatted_prompt: str = Field(..., min_length=1)
    response: str = ""
    label: ExampleLabel


class ExampleSet(BaseModel):
    examples: List[ExampleRun] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _unique_ids(self) -> "ExampleSet":
        ids = [e.id for e in self.examples]
        if len(set(ids)) != len(ids):
            raise ValueError("example ids must be unique")
        return self

    @property
    def ids(self) -> List[str]:
        return [e.id for e in self.examples]

    @property
    def labels(self) -> List[int]:
        return [int(e.label) for e in self.examples]

    def first_good(self) -> Optional[ExampleRun]:
        return next((e for e in self.examples if e.label == ExampleLabel.GOOD), None)


class DraftAssertion(BaseModel):
    """A synthesized spec before it is given a candidate id"""
    concept: CriterionConcept
    spec: AssertionSpec


class Candidate(BaseModel):
    id: str
    delta_version: int
    concept: str
    category: CategoryName
    spec: AssertionSpec


class CandidateSet(BaseModel):
    candidates: List[Candidate] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_ids(self) -> "CandidateSet":
        ids = self.ids
        if len(set(ids)) != len(ids):
            raise ValueError("candidate ids must be unique")
        return self

    @property
    def ids(self) -> List[str]:
        return [c.id for c in self.candidates]

    def by_id(self) -> Dict[str, Candidate]:
        return {c.id: c for c in self.candidates}

    def category_tally(self) -> Dict[str, int]:
        tally: Dict[str, int] = {}
        for c in self.candidates:
            tally[c.category.value] = tally.get(c.category.value, 0) + 1
        return dict(sorted(tally.items()))


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------

def _check_binary(cells: List[List[int]], rows: int, cols: int, what: str) -> None:
    if len(cells) != rows:
        raise ValueError(f"{what} has {len(cells)} rows, expected {rows}")
    for row in cells:
        if len(row) != cols:
            raise ValueError(f"{what} row has {len(row)} cells, expected {cols}")
        if any(v not in (0, 1) for v in row):
            raise ValueError(f"{what} cells must be 0 or 1")


class ResultMatrix(BaseModel):
    """M: cell(i, j) = 1 iff assertion j passes example i"""
    example_ids: List[str]
    assertion_ids: List[str]
    cells: List[List[int]]

    @model_validator(mode="after")
    def _shape(self) -> "ResultMatrix":
        _check_binary(self.cells, len(self.example_ids), len(self.assertion_ids), "result matrix")
        if len(set(self.assertion_ids)) != len(self.assertion_ids):
            raise ValueError("assertion ids must be unique")
        return self

    def column_index(self, assertion_id: str) -> int:
        try:
            return self.assertion_ids.index(assertion_id)
        except ValueError:
            raise UnknownAssertionError(assertion_id) from None


class Provenance(str, Enum):
    DSL_RULE = "DSL_RULE"
    LLM = "LLM"
    TRANSITIVE = "TRANSITIVE"


def pair_key(subsumer: str, subsumed: str) -> str:
    return f"{subsumer}->{subsumed}"


class SubsumptionMatrix(BaseModel):
    """K: cell(i, j) = 1 iff {f_i} implies f_j"""
    assertion_ids: List[str]
    cells: List[List[int]]
    provenance: Dict[str, Provenance] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _square_reflexive(self) -> "SubsumptionMatrix":
        m = len(self.assertion_ids)
        _check_binary(self.cells, m, m, "subsumption matrix")
        if any(self.cells[i][i] != 1 for i in range(m)):
            raise ValueError("subsumption matrix diagonal must be 1")
        return self

    @classmethod
    def identity(cls, assertion_ids: List[str]) -> "SubsumptionMatrix":
        m = len(assertion_ids)
        return cls(
            assertion_ids=list(assertion_ids),
            cells=[[1 if i == j else 0 for j in range(m)] for i in range(m)],
        )

    @classmethod
    def from_edges(cls, assertion_ids: List[str], edges: List[tuple],
                   provenance: Provenance = Provenance.DSL_RULE) -> "SubsumptionMatrix":
        matrix = cls.identity(assertion_ids)
        index = {a: i for i, a in enumerate(assertion_ids)}
        for subsumer, subsumed in edges:
            if subsumer == subsumed:
                continue
            matrix.cells[index[subsumer]][index[subsumed]] = 1
            matrix.provenance[pair_key(subsumer, subsumed)] = provenance
        return matrix

    def implies(self, subsumer: str, subsumed: str) -> bool:
        index = {a: i for i, a in enumerate(self.assertion_ids)}
        return self.cells[index[subsumer]][index[subsumed]] == 1

    def provenance_counts(self) -> Dict[str, int]:
        counts = {p.value: 0 for p in Provenance}
        for p in self.provenance.values():
            counts[p.value] += 1
        return counts


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

class SelectionMode(str, Enum):
    COV = "cov"
    SUB = "sub"
    BASELINE = "baseline"
    NO_EXAMPLES = "no-examples"


class SelectionConfig(BaseModel):
    alpha: float = Field(0.6, ge=0.0, le=1.0, description="coverage threshold")
    tau: float = Field(0.25, ge=0.0, le=1.0, description="false failure rate threshold")
    mode: SelectionMode = SelectionMode.SUB
    time_limit: float = Field(60.0, gt=0, description="solver time limit in seconds")


class SelectionStatus(str, Enum):
    OPTIMAL = "OPTIMAL"
    INFEASIBLE = "INFEASIBLE"
    TIME_LIMIT = "TIME_LIMIT"


class SelectionResult(BaseModel):
    """F', G and the achieved metrics on E'"""
    mode: SelectionMode
    alpha: Optional[float] = None
    tau: Optional[float] = None
    status: SelectionStatus
    selected_ids: List[str] = Field(default_factory=list)
    excluded_not_subsumed_ids: List[str] = Field(default_factory=list)
    coverage: Optional[float] = None
    ffr: Optional[float] = None
    objective_value: int = 0
    max_coverage_at_tau: Optional[float] = None
    num_candidates: int = 0

    @model_validator(mode="after")
    def _disjoint(self) -> "SelectionResult":
        if set(self.selected_ids) & set(self.excluded_not_subsumed_ids):
            raise ValueError("selected and excluded-not-subsumed sets must be disjoint")
        return self

    @property
    def fraction_selected(self) -> float:
        return len(self.selected_ids) / self.num_candidates if self.num_candidates else 0.0

    @property
    def fraction_excluded_not_subsumed(self) -> float:
        return len(self.excluded_not_subsumed_ids) / self.num_candidates if self.num_candidates else 0.0


# ---------------------------------------------------------------------------
# Run configuration and report
# ---------------------------------------------------------------------------

class RunConfig(BaseModel):
    """Configuration for an end-to-end run"""
    history: Path
    examples: Path
    out_dir: Path = Path("artifacts")
    candidates: Optional[Path] = None
    matrix: Optional[Path] = None
    subsumption: Optional[Path] = None
    selection_out: Optional[Path] = None
    report: Optional[Path] = None
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    report_modes: List[SelectionMode] = Field(
        default_factory=lambda: [SelectionMode.BASELINE, SelectionMode.COV, SelectionMode.SUB]
    )
    gateway_mode: Optional[GatewayMode] = None
    cache_dir: Optional[Path] = None
    use_llm_subsumption: bool = True
    workers: int = Field(4, ge=1)

    def artifact(self, name: str) -> Path:
        explicit = {
            "candidates": self.candidates,
            "matrix": self.matrix,
            "subsumption": self.subsumption,
            "selection": self.selection_out,
            "report": self.report,
        }[name]
        return explicit if explicit is not None else self.out_dir / f"{name}.json"


class GenerationOutcome(BaseModel):
    delta_version: int
    ok: bool
    concepts: int = 0
    specs: int = 0
    skipped_specs: int = 0
    error: Optional[str] = None


class EvaluationError(BaseModel):
    assertion_id: str
    example_id: str
    kind: str
    message: str = ""


class Refutation(BaseModel):
    subsumer: str
    subsumed: str
    witness_example_id: str


class SubsumptionSummary(BaseModel):
    provenance_counts: Dict[str, int] = Field(default_factory=dict)
    llm_pairs_proposed: int = 0
    llm_pairs_dropped: int = 0
    refutations: List[Refutation] = Field(default_factory=list)
    skipped_for_ffr: List[str] = Field(default_factory=list)
    llm_status: str = "not_run"
    consistency_alarms: List[str] = Field(default_factory=list)


class ModeMetrics(BaseModel):
    """The four reported metrics for one solved mode"""
    mode: SelectionMode
    status: SelectionStatus
    fraction_selected: float
    fraction_excluded_not_subsumed: float
    ffr: Optional[float]
    coverage: Optional[float]
    selected: int
    excluded_not_subsumed: int


class RunReport(BaseModel):
    stage_timings: Dict[str, float] = Field(default_factory=dict)
    generation: List[GenerationOutcome] = Field(default_factory=list)
    evaluation_errors: List[EvaluationError] = Field(default_factory=list)
    subsumption: SubsumptionSummary = Field(default_factory=SubsumptionSummary)
    metrics: List[ModeMetrics] = Field(default_factory=list)
    skipped_stages: List[str] = Field(default_factory=list)
    consistent: Optional[bool] = None
