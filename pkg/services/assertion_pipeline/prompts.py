"""
Prompt text sent to the model by generation and subsumption
"""
import json
from typing import List, Sequence

from .models import CriterionConcept, ExampleRun, PromptDelta, PromptTemplate

CATEGORY_GUIDE = """\
- Presentation Format: does the template ask for a particular response format, such as a bulleted list or a JSON object?
- Example Demonstration: does the template show good responses with headers, keys or structure to reproduce?
- Workflow Description: does the template describe steps the model should follow that could be checked?
- Data Integration: does the template ask the model to use data from the example input?
- Count: does the template constrain how many items, words or sentences appear ("at least", "at most", exactly N)?
- Inclusion: are there keywords or content every response must include?
- Exclusion: are there keywords or content no response may mention?
- Qualitative Assessment: are there criteria of tone, style or length for judging a good response?
- Prompt Clarification: does the change clarify an earlier instruction in a way a response could violate?
- Other: anything else worth checking that the categories above miss."""

DSL_GUIDE = """\
Each assertion is a JSON object with a "kind" and a kind-specific payload:
- CONTAINS_ALL, CONTAINS_ANY, EXCLUDES_ALL: "operands", a list of {"value": str, "field": bool, "casefold": bool}.
  field=true means value names a key of the example input; casefold=true compares ignoring case.
- STARTS_WITH: exactly one operand the trimmed response must begin with.
- REGEX_MATCH: exactly one literal operand holding a regular expression searched anywhere in the response.
- WORD_COUNT, SENTENCE_COUNT: integer "min" and/or "max" bounds (inclusive).
- JSON_PARSEABLE: "shape" is "any", "list" or "object".
- JSON_LIST_MIN_LEN: the response is a JSON list with at least "min" items.
- JSON_REQUIRED_KEYS: the response is a JSON object containing every name in "keys".
- LLM_QUESTION: "questions", one or two yes/no questions an expert model answers about the response; all must be yes.
- ALL_OF, ANY_OF: "children", a list of assertions combined with and/or (at most 3 levels deep)."""


def render_categorize(delta: PromptDelta) -> str:
    return (
        "These lines changed in my prompt template (+ added, - removed):\n\n"
        f"{delta.render()}\n\n"
        "I want assertions that run on every response of my LLM pipeline. "
        "Sort what to check into these categories:\n\n"
        f"{CATEGORY_GUIDE}\n\n"
        "List the concepts to check in the responses. For each give a description of the concept, "
        "its category from the list above, and the source: the phrase of the changed lines that "
        "led to the concept. For instance, for the template \"Give me a bulleted list of colors to "
        "paint <object>.\" one concept is \"The response should be a bulleted list of colors.\" "
        "with category \"Presentation Format\" and source \"Give me a bulleted list of colors\".\n\n"
        "Answer with a JSON list of objects inside ```json ``` markers. Each object has the fields "
        "\"concept\", \"category\" and \"source\". Include every specific, reasonable concept you can find."
    )


def render_synthesize(concepts: Sequence[CriterionConcept], final_prompt: PromptTemplate,
                      sample: ExampleRun) -> str:
    concept_lines = "\n".join(
        f"{i}. [{c.category.name.value}] {c.concept}" for i, c in enumerate(concepts)
    )
    return (
        f"My prompt template is:\n\n\"{final_prompt.text}\"\n\n"
        "One example input and the response it produced:\n\n"
        f"Example: {json.dumps(sample.input, ensure_ascii=False, sort_keys=True)}\n"
        f"LLM Response: {sample.response}\n\n"
        f"The concepts I want to check in responses:\n\n{concept_lines}\n\n"
        "Write assertions that check these concepts, using this rule language:\n\n"
        f"{DSL_GUIDE}\n\n"
        "Use LLM_QUESTION only when a concept cannot be checked by the other kinds. "
        "Never cover more than two concepts with one assertion. When a concept is ambiguous, "
        "write several different assertions for it.\n\n"
        "Answer with a JSON list inside ```json ``` markers. Each element is an object with "
        "\"concept_index\" (the number of the concept above), \"description\" (what is checked) "
        "and \"spec\" (the assertion)."
    )


def render_subsume_list(described: List[str]) -> str:
    blob = "\n".join(described)
    return (
        f"These are all my assertion functions:\n\n{blob}\n\n"
        "Find every pair of functions where one implies the other: whenever the first passes, "
        "the second passes too. Implication is directional, so A may imply B without B implying A. "
        "When two functions check the same thing each implies the other; list both directions. "
        "The function names may help decide whether two functions check the same thing."
    )


def render_subsume_format(listing: str) -> str:
    return (
        f"{listing}\n\n"
        "Return the pairs above as a JSON list inside ```json ``` markers, each element a pair "
        "[A, B] meaning A implies B. When A and B check the same thing include both [A, B] and "
        "[B, A]. With two functions check_json and assert_json the answer would be:\n"
        "```json\n[[\"check_json\", \"assert_json\"], [\"assert_json\", \"check_json\"]]\n```"
    )


REFORMAT_REQUEST = (
    "Your previous answer could not be parsed. Reply with only the JSON value inside "
    "```json ``` markers, nothing else.\n\nPrevious answer:\n\n"
)


def render_reformat(previous_reply: str) -> str:
    return REFORMAT_REQUEST + previous_reply
