"""
Prompt history - sentence segmentation and sentence-level deltas between versions
"""
import logging
import re
from pathlib import Path
from typing import List, Sequence, Tuple, Union

from pydantic import BaseModel, Field
from pydantic import ValidationError as SchemaError

from .artifacts import read_json
from .errors import ParseError, ValidationError, VersionGapError
from .models import DeltaEntry, DeltaTag, PromptDelta, PromptTemplate, PromptVersionHistory

logger = logging.getLogger(__name__)

# A terminator only ends a sentence when whitespace (or the line end) follows it
_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")


def segment_sentences(text: str) -> List[str]:
    """
    Split text at newlines and at ., ! or ? followed by whitespace
    """
    sentences = []
    for line in text.splitlines():
        for piece in _SENTENCE_BREAK.split(line):
            piece = piece.strip()
            if piece:
                sentences.append(piece)
    return sentences


def lcs_alignment(a: Sequence[str], b: Sequence[str]) -> List[Tuple[int, int]]:
    """
    Index pairs (i, j) of one longest common subsequence of a and b
    """
    n, m = len(a), len(b)
    # C[i][j] = LCS length of a[i:] and b[j:]
    C = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                C[i][j] = C[i + 1][j + 1] + 1
            else:
                C[i][j] = max(C[i + 1][j], C[i][j + 1])

    pairs = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j]:
            pairs.append((i, j))
            i += 1
            j += 1
        elif C[i + 1][j] >= C[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def diff_sentences(prev: Sequence[str], nxt: Sequence[str]) -> List[DeltaEntry]:
    """
    Tagged entries turning prev into nxt; each hunk lists DELETED before ADDED
    """
    entries: List[DeltaEntry] = []
    i = j = 0
    # Sentinel match past both ends flushes the trailing hunk
    for mi, mj in lcs_alignment(prev, nxt) + [(len(prev), len(nxt))]:
        entries.extend(DeltaEntry(tag=DeltaTag.DELETED, sentence=prev[k], position=k) for k in range(i, mi))
        entries.extend(DeltaEntry(tag=DeltaTag.ADDED, sentence=nxt[k], position=k) for k in range(j, mj))
        i, j = mi + 1, mj + 1
    return entries


def compute_delta(prev: PromptTemplate, next: PromptTemplate) -> PromptDelta:
    """
    Sentence-level delta between two consecutive template versions
    """
    if next.version_index != prev.version_index + 1:
        raise VersionGapError(
            f"cannot diff version {prev.version_index} against version {next.version_index}"
        )
    entries = diff_sentences(segment_sentences(prev.text), segment_sentences(next.text))
    return PromptDelta(from_version=prev.version_index, to_version=next.version_index, entries=entries)


def compute_deltas(history: PromptVersionHistory) -> List[PromptDelta]:
    """ΔP_1..ΔP_k for a history"""
    return [compute_delta(a, b) for a, b in zip(history.versions, history.versions[1:])]


def apply_delta(prev_sentences: Sequence[str], delta: PromptDelta) -> List[str]:
    """
    Rebuild the successor's sentence list from prev and a delta
    """
    dropped = {e.position for e in delta.deleted}
    result = [s for k, s in enumerate(prev_sentences) if k not in dropped]
    for entry in sorted(delta.added, key=lambda e: e.position):
        result.insert(entry.position, entry.sentence)
    return result


class _VersionRecord(BaseModel):
    version: int = Field(..., ge=0)
    text: str


class _HistoryFile(BaseModel):
    versions: List[_VersionRecord]


def load_history(path: Union[str, Path]) -> PromptVersionHistory:
    """
    Load a history file, injecting the empty P_0 when it starts at version 1
    """
    raw = read_json(path)
    try:
        records = _HistoryFile.model_validate(raw).versions
    except SchemaError as e:
        raise ParseError(f"{path}: {e}") from e

    if not records:
        raise ValidationError(f"{path}: history has no versions")

    indices = [r.version for r in records]
    if records[0].version == 1:
        logger.debug("Injecting empty version 0 into %s", path)
        records.insert(0, _VersionRecord(version=0, text=""))
        indices.insert(0, 0)
    if indices != list(range(len(indices))):
        raise ValidationError(f"{path}: versions must be consecutive from 0 or 1, got {indices}")
    if records[0].text != "":
        raise ValidationError(f"{path}: version 0 must be the empty template")
    if len(records) < 2:
        raise ValidationError(f"{path}: history needs at least one non-empty version")

    return PromptVersionHistory(
        versions=[PromptTemplate(text=r.text, version_index=r.version) for r in records]
    )
