"""Difficulty and diversity of a dataset, measured by re-tagging a sample of
its instructions: difficulty is the mean tag count per sample, diversity the
size of the union tag set.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ParseError, PreconditionError, TagEvolError
from .gateway import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    BackendError,
    ChatRequest,
    Gateway,
    user_message,
)
from .records import InstructionRecord
from .tagging import RejectedTag, build_tagging_prompt, normalize_tag, parse_tagging_response


class EmptyInput(TagEvolError):
    """A metric was requested over an empty collection."""


class MetricsFailed(TagEvolError):
    """Every sampled record failed tagging; no metrics can be reported."""


def difficulty(tag_sets: Sequence[Iterable]) -> float:
    """Arithmetic mean of tag-set sizes."""
    tag_sets = list(tag_sets)
    if not tag_sets:
        raise EmptyInput("no tag sets")
    return sum(len(set(s)) for s in tag_sets) / len(tag_sets)


def diversity(tag_sets: Sequence[Iterable]) -> int:
    """Cardinality of the union tag set after normalization.

    Elements that normalize to nothing are dropped rather than counted.
    """
    tag_sets = list(tag_sets)
    if not tag_sets:
        raise EmptyInput("no tag sets")
    union: set[str] = set()
    for tags in tag_sets:
        for tag in tags:
            try:
                union.add(normalize_tag(tag))
            except RejectedTag:
                continue
    return len(union)


@dataclass(frozen=True)
class MetricsReport:
    """Difficulty/diversity over the successfully tagged sample.

    ``sample_size`` counts surviving samples, so difficulty always equals
    sum(per_sample_counts) / sample_size; dropped samples are listed aside.
    """

    difficulty: float
    diversity: int
    per_sample_counts: list[int]
    sample_size: int
    model: str
    dropped: list[dict]

    def to_json(self) -> dict:
        return {
            "difficulty": self.difficulty,
            "diversity": self.diversity,
            "sample_size": self.sample_size,
            "dropped": len(self.dropped),
            "model": self.model,
        }


def evaluate_dataset(
    records: Sequence[InstructionRecord],
    gateway: Gateway,
    sample_size: int = 50,
    rng: random.Random | None = None,
    retries: int = 2,
    *,
    model: str,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> MetricsReport:
    """Tag a uniform sample of records and report difficulty and diversity.

    The per-record tag set flattens aspects and collapses duplicates. Samples
    whose tagging keeps failing after ``retries`` extra attempts are dropped
    and recorded; if everything drops, :class:`MetricsFailed` is raised.
    """
    records = list(records)
    if sample_size < 1:
        raise PreconditionError("sample_size must be >= 1")
    if sample_size > len(records):
        raise PreconditionError(f"sample_size {sample_size} exceeds dataset size {len(records)}")
    rng = rng if rng is not None else random.Random(0)
    sample = rng.sample(records, sample_size)

    def tag_one(record: InstructionRecord):
        prompt = build_tagging_prompt(record)
        request = ChatRequest(
            model=model,
            messages=(user_message(prompt),),
            temperature=temperature,
            max_tokens=max_tokens,
        )
        last_error: Exception | None = None
        for _ in range(retries + 1):
            try:
                response = gateway.complete(request)
            except BackendError as err:
                return record, None, str(err)
            try:
                parsed = parse_tagging_response(response.content)
            except ParseError as err:
                last_error = err
                continue
            tags: set[str] = set()
            for aspect_tags in parsed.values():
                for raw in aspect_tags:
                    try:
                        tags.add(normalize_tag(raw))
                    except RejectedTag:
                        continue
            return record, tags, None
        return record, None, str(last_error)

    results = gateway.map_in_order(tag_one, sample)
    tag_sets: list[set[str]] = []
    dropped: list[dict] = []
    for record, tags, error in results:
        if tags is None:
            dropped.append({"record_id": record.id, "error": error})
        else:
            tag_sets.append(tags)
    if not tag_sets:
        raise MetricsFailed("all sampled records failed tagging")
    return MetricsReport(
        difficulty=difficulty(tag_sets),
        diversity=diversity(tag_sets),
        per_sample_counts=[len(s) for s in tag_sets],
        sample_size=len(tag_sets),
        model=model,
        dropped=dropped,
    )
