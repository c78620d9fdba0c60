"""
Tests for sentence segmentation, prompt deltas and history loading
"""
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from services.assertion_pipeline.artifacts import write_json
from services.assertion_pipeline.errors import ParseError, ValidationError, VersionGapError
from services.assertion_pipeline.history import (
    apply_delta,
    compute_delta,
    compute_deltas,
    diff_sentences,
    lcs_alignment,
    load_history,
    segment_sentences,
)
from services.assertion_pipeline.models import DeltaTag, PromptDelta, PromptTemplate

from conftest import FIXTURES, MOVIE

S1 = ("Given the following information about the user, {personal_info}, and information about a movie, "
      "{movie_info}: write a personalized note for why the user should watch this movie.")
S2 = "Include elements from the movie's genre, cast, and themes that align with the user's interests."
S3 = "Ensure the recommendation note is concise."
S4 = "Ensure the recommendation note is concise, not exceeding 100 words."
S5 = ("Mention the movie's genre and any shared cast members between the {movie_name} "
      "and other movies the user has watched.")
S6 = "Mention any awards or critical acclaim received by {movie_name}."
S7 = "Do not mention anything related to the user's race, ethnicity, or any other sensitive attributes."


def _entries(delta):
    return [(e.tag, e.sentence, e.position) for e in delta.entries]


def test_segmentation_corpus():
    with open(FIXTURES / "sentences.json", "r", encoding="utf-8") as f:
        corpus = json.load(f)
    assert len(corpus) == 20
    for case in corpus:
        assert segment_sentences(case["text"]) == case["sentences"], case["text"]


def test_movie_history_loads_with_empty_base():
    history = load_history(MOVIE / "history.json")
    assert [v.version_index for v in history.versions] == list(range(8))
    assert history.versions[0].text == ""
    assert segment_sentences(history.final.text) == [S1, S4, S5, S6, S7]
    assert history.final.placeholders == ["personal_info", "movie_info", "movie_name"]


def test_movie_history_deltas():
    deltas = compute_deltas(load_history(MOVIE / "history.json"))
    added, deleted = DeltaTag.ADDED, DeltaTag.DELETED

    assert [d.to_version for d in deltas] == [1, 2, 3, 4, 5, 6, 7]
    assert _entries(deltas[0]) == [(added, S1, 0)]
    assert _entries(deltas[1]) == [(added, S2, 1)]
    assert _entries(deltas[2]) == [(added, S3, 2)]
    assert _entries(deltas[3]) == [(deleted, S3, 2), (added, S4, 2)]
    assert _entries(deltas[4]) == [(deleted, S2, 1), (added, S5, 2)]
    assert _entries(deltas[5]) == [(added, S6, 3)]
    assert _entries(deltas[6]) == [(added, S7, 4)]


def test_delta_render_marks_lines():
    delta = compute_delta(
        PromptTemplate(text="Keep it short. Use bullets.", version_index=3),
        PromptTemplate(text="Keep it short. Use a numbered list.", version_index=4),
    )
    assert delta.render() == "- Use bullets.\n+ Use a numbered list."


def test_identical_versions_give_empty_delta():
    delta = compute_delta(
        PromptTemplate(text="Same text. Twice.", version_index=1),
        PromptTemplate(text="Same text.\nTwice.", version_index=2),
    )
    assert delta.entries == []


def test_non_consecutive_versions_rejected():
    with pytest.raises(VersionGapError):
        compute_delta(
            PromptTemplate(text="A.", version_index=1),
            PromptTemplate(text="B.", version_index=3),
        )


def test_placeholders_ignore_whitespace_braces():
    template = PromptTemplate(text="Fill {name} and {name} but not { } or {}.", version_index=1)
    assert template.placeholders == ["name"]


def test_duplicate_sentences_align_once():
    assert lcs_alignment(["A.", "A.", "B."], ["A.", "B."]) in ([(0, 0), (2, 1)], [(1, 0), (2, 1)])
    entries = diff_sentences(["A.", "A.", "B."], ["A.", "B."])
    assert len(entries) == 1
    assert entries[0].tag == DeltaTag.DELETED


sentences = st.lists(st.sampled_from(["A.", "B.", "C.", "D.", "E."]), max_size=8)


@settings(max_examples=1000, deadline=None)
@given(prev=sentences, nxt=sentences)
def test_apply_delta_rebuilds_successor(prev, nxt):
    delta = PromptDelta(from_version=0, to_version=1, entries=diff_sentences(prev, nxt))
    assert apply_delta(prev, delta) == nxt
    common = len(lcs_alignment(prev, nxt))
    assert len(delta.entries) == len(prev) + len(nxt) - 2 * common


# ---------------------------------------------------------------------------
# Loading errors
# ---------------------------------------------------------------------------

def _history_file(tmp_path, versions):
    return write_json(tmp_path / "history.json", {"versions": versions})


def test_missing_history_file(tmp_path):
    with pytest.raises(ParseError):
        load_history(tmp_path / "nope.json")


def test_history_with_gap(tmp_path):
    path = _history_file(tmp_path, [{"version": 1, "text": "A."}, {"version": 3, "text": "B."}])
    with pytest.raises(ValidationError):
        load_history(path)


def test_history_without_versions(tmp_path):
    with pytest.raises(ValidationError):
        load_history(_history_file(tmp_path, []))


def test_history_with_non_empty_base(tmp_path):
    path = _history_file(tmp_path, [{"version": 0, "text": "A."}, {"version": 1, "text": "B."}])
    with pytest.raises(ValidationError):
        load_history(path)


def test_history_with_bad_schema(tmp_path):
    path = _history_file(tmp_path, [{"version": "first", "body": "A."}])
    with pytest.raises(ParseError):
        load_history(path)


def test_history_starting_at_zero_is_kept(tmp_path):
    path = _history_file(tmp_path, [{"version": 0, "text": ""}, {"version": 1, "text": "A. B."}])
    history = load_history(path)
    assert len(history.versions) == 2
    assert [e.sentence for e in compute_deltas(history)[0].added] == ["A.", "B."]
