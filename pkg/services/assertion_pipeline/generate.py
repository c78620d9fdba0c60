"""
Candidate Generation - categorize prompt deltas, then synthesize DSL assertions
"""
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from typing import Any, List, Optional, Tuple

from pydantic import ValidationError as SchemaError

from . import prompts
from .errors import EmptyCandidateSetError, GenerationParseError, PipelineError, PreconditionError
from .history import compute_deltas
from .models import (
    AssertionSpec,
    Candidate,
    CandidateSet,
    CategoryName,
    CriterionConcept,
    DeltaCategory,
    DraftAssertion,
    ExampleRun,
    ExampleSet,
    GenerationOutcome,
    LlmRequest,
    PromptDelta,
    PromptTemplate,
    PromptVersionHistory,
    RequestKind,
)

logger = logging.getLogger(__name__)

_FENCED_JSON = re.compile(r"```json\s*(.*?)```", re.DOTALL | re.IGNORECASE)

CATEGORY_SYNONYMS = {
    "presentation format": CategoryName.RESPONSE_FORMAT,
    "response format": CategoryName.RESPONSE_FORMAT,
    "response format instruction": CategoryName.RESPONSE_FORMAT,
    "format": CategoryName.RESPONSE_FORMAT,
    "example demonstration": CategoryName.EXAMPLE_DEMONSTRATION,
    "examples": CategoryName.EXAMPLE_DEMONSTRATION,
    "prompt clarification": CategoryName.PROMPT_CLARIFICATION,
    "clarification": CategoryName.PROMPT_CLARIFICATION,
    "instruction clarification": CategoryName.PROMPT_CLARIFICATION,
    "workflow description": CategoryName.WORKFLOW_DESCRIPTION,
    "workflow": CategoryName.WORKFLOW_DESCRIPTION,
    "data integration": CategoryName.DATA_INTEGRATION,
    "data placeholders": CategoryName.DATA_INTEGRATION,
    "count": CategoryName.COUNT,
    "count instruction": CategoryName.COUNT,
    "inclusion": CategoryName.INCLUSION,
    "inclusion instruction": CategoryName.INCLUSION,
    "exclusion": CategoryName.EXCLUSION,
    "exclusion instruction": CategoryName.EXCLUSION,
    "qualitative assessment": CategoryName.QUALITATIVE,
    "qualitative criteria": CategoryName.QUALITATIVE,
    "qualitative": CategoryName.QUALITATIVE,
    "other": CategoryName.OTHER,
}


def parse_fenced_json(text: str) -> Any:
    """
    First ```json block, else the first top-level JSON array or object in the text
    """
    for block in _FENCED_JSON.findall(text):
        try:
            return json.loads(block)
        except ValueError:
            break

    decoder = json.JSONDecoder()
    for start, char in enumerate(text):
        if char not in "[{":
            continue
        try:
            value, _ = decoder.raw_decode(text, start)
            return value
        except ValueError:
            continue
    raise GenerationParseError(f"no JSON found in reply: {text[:80]!r}")


def map_category(label: Any) -> CategoryName:
    """Map a category string from a model reply onto the fixed taxonomy"""
    if not isinstance(label, str):
        return CategoryName.OTHER
    key = " ".join(label.replace("_", " ").lower().split())
    if key in CATEGORY_SYNONYMS:
        return CATEGORY_SYNONYMS[key]
    for name in CategoryName:
        if key == name.value.replace("_", " ").lower():
            return name
    logger.debug("Unmapped category %r filed under OTHER", label)
    return CategoryName.OTHER


def ask_json(gateway, request: LlmRequest, expect: type = list) -> Any:
    """
    Send a request and parse the JSON in the reply, asking once for a reformat on failure
    """
    reply = gateway.complete(request).text
    try:
        value = parse_fenced_json(reply)
        if isinstance(value, expect):
            return value
    except GenerationParseError:
        pass

    logger.warning("Could not parse %s reply, asking for a reformat", request.request_kind.value)
    retry = LlmRequest(
        system_text=request.system_text,
        user_text=prompts.render_reformat(reply),
        temperature=0.0,
        request_kind=request.request_kind,
    )
    value = parse_fenced_json(gateway.complete(retry).text)
    if not isinstance(value, expect):
        raise GenerationParseError(
            f"{request.request_kind.value} reply is a {type(value).__name__}, expected a {expect.__name__}"
        )
    return value


def categorize_delta(delta: PromptDelta, gateway) -> List[CriterionConcept]:
    """
    Assertion concepts for one delta, each tagged with a taxonomy category
    """
    if not delta.entries:
        raise PreconditionError(f"delta {delta.to_version} has no entries")

    items = ask_json(gateway, LlmRequest(
        user_text=prompts.render_categorize(delta),
        temperature=gateway.generation_temperature,
        request_kind=RequestKind.CATEGORIZE,
    ))

    haystacks = [e.sentence for e in delta.entries]
    concepts = []
    for item in items:
        if not isinstance(item, dict):
            logger.warning("Skipping non-object concept in delta %d: %r", delta.to_version, item)
            continue
        text = item.get("concept") or item.get("criterion")
        if not isinstance(text, str) or not text.strip():
            logger.warning("Skipping concept without description in delta %d", delta.to_version)
            continue
        source = item.get("source")
        sourced = isinstance(source, str) and bool(source.strip()) and any(
            source in h for h in haystacks
        )
        if not sourced:
            logger.warning("Concept %r has no source in delta %d", text[:60], delta.to_version)
        concepts.append(CriterionConcept(
            concept=text.strip(),
            category=DeltaCategory.of(map_category(item.get("category"))),
            source=source.strip() if isinstance(source, str) and source.strip() else text.strip(),
            delta_version=delta.to_version,
            unsourced=not sourced,
        ))
    return concepts


def _spec_payload(item: dict) -> Any:
    if "spec" in item:
        return item["spec"]
    return {k: v for k, v in item.items() if k not in ("concept_index", "concept")}


def synthesize_assertions(concepts: List[CriterionConcept], final_prompt: PromptTemplate,
                          sample: ExampleRun, gateway,
                          outcome: Optional[GenerationOutcome] = None) -> List[DraftAssertion]:
    """
    DSL specs for a list of concepts; invalid specs are skipped, never fatal
    """
    if not concepts:
        raise PreconditionError("synthesis needs at least one concept")
    if not sample.response:
        raise PreconditionError(f"sample example {sample.id} has an empty response")

    items = ask_json(gateway, LlmRequest(
        user_text=prompts.render_synthesize(concepts, final_prompt, sample),
        temperature=gateway.generation_temperature,
        request_kind=RequestKind.SYNTHESIZE,
    ))

    drafts = []
    skipped = 0
    for item in items:
        if not isinstance(item, dict):
            skipped += 1
            continue
        index = item.get("concept_index", 0 if len(concepts) == 1 else None)
        if not isinstance(index, int) or not 0 <= index < len(concepts):
            logger.warning("Skipping spec with bad concept_index %r", index)
            skipped += 1
            continue
        try:
            spec = AssertionSpec.model_validate(_spec_payload(item))
        except SchemaError as e:
            logger.warning("Skipping invalid spec for concept %d: %s", index, e.errors()[0]["msg"])
            skipped += 1
            continue
        if not spec.description and isinstance(item.get("description"), str):
            spec = spec.model_copy(update={"description": item["description"]})
        drafts.append(DraftAssertion(concept=concepts[index], spec=spec))

    if outcome is not None:
        outcome.specs = len(drafts)
        outcome.skipped_specs = skipped
    if not drafts:
        raise EmptyCandidateSetError(f"no valid specs for delta {concepts[0].delta_version}")
    return drafts


def choose_sample(examples: ExampleSet) -> ExampleRun:
    """The first GOOD example, falling back to the first example"""
    sample = examples.first_good()
    if sample is None:
        logger.warning("No GOOD example to show the model; using %s", examples.examples[0].id)
        sample = examples.examples[0]
    return sample


_SLUG_STOPWORDS = {
    "a", "an", "and", "be", "by", "for", "in", "is", "it", "of", "or", "response", "s", "should", "the", "to",
}


def slugify(text: str, words: int = 4) -> str:
    tokens = [t for t in re.findall(r"[a-z0-9]+", text.lower()) if t not in _SLUG_STOPWORDS]
    return "_".join(tokens[:words])[:32].rstrip("_") or "check"


def _process_delta(delta: PromptDelta, final_prompt: PromptTemplate, sample: ExampleRun,
                   gateway) -> Tuple[GenerationOutcome, List[DraftAssertion]]:
    outcome = GenerationOutcome(delta_version=delta.to_version, ok=True)
    if not delta.entries:
        return outcome, []
    try:
        concepts = categorize_delta(delta, gateway)
        outcome.concepts = len(concepts)
        if not concepts:
            return outcome, []
        return outcome, synthesize_assertions(concepts, final_prompt, sample, gateway, outcome)
    except PipelineError as e:
        logger.warning("Delta %d skipped: %s", delta.to_version, e)
        outcome.ok = False
        outcome.error = f"{type(e).__name__}: {e}"
        return outcome, []


def generate_candidates(history: PromptVersionHistory, sample: ExampleRun, gateway, workers: int = 4,
                        outcomes: Optional[List[GenerationOutcome]] = None) -> CandidateSet:
    """
    Candidates from every delta, ids a<version>_<ordinal>_<slug> in delta order
    """
    deltas = compute_deltas(history)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(
            lambda d: _process_delta(d, history.final, sample, gateway), deltas
        ))

    candidates = []
    for delta, (outcome, drafts) in zip(deltas, results):
        if outcomes is not None:
            outcomes.append(outcome)
        for ordinal, draft in enumerate(drafts, start=1):
            candidate_id = f"a{delta.to_version}_{ordinal}_{slugify(draft.concept.concept)}"
            candidates.append(Candidate(
                id=candidate_id,
                delta_version=delta.to_version,
                concept=draft.concept.concept,
                category=draft.concept.category.name,
                spec=draft.spec.model_copy(update={"id": candidate_id}),
            ))

    if not candidates:
        raise EmptyCandidateSetError("generation produced no valid assertions")
    logger.info("Generated %d candidates from %d deltas", len(candidates), len(deltas))
    return CandidateSet(candidates=candidates)
