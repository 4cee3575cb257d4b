"""Shared test fixtures and record builders."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from conscal.records import GenerationRecord, QueryRecord, SampleSet

# Model fitting inside property bodies makes per-example runtimes jittery;
# judge examples on correctness, not wall clock.
settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_query(
    query_id: str = "q1",
    *,
    group: str = "main",
    gold: tuple[str, ...] | None = ("a",),
    question_embedding: tuple[float, ...] | None = None,
) -> QueryRecord:
    return QueryRecord(
        query_id=query_id,
        text=f"question {query_id}",
        group=group,
        gold_answers=gold,
        question_embedding=question_embedding,
    )


def make_generation(
    query_id: str = "q1",
    sample_index: int = 0,
    *,
    answer: str | None = None,
    text: str | None = None,
    token_logprobs: tuple[float, ...] = (-0.1, -0.2),
    answer_token_logprobs: tuple[float, ...] | None = (-0.05,),
    embedding: tuple[float, ...] = (0.0, 1.0),
) -> GenerationRecord:
    if text is None:
        text = f"thinking... \\boxed{{{answer}}}" if answer is not None else "no answer here"
    return GenerationRecord(
        query_id=query_id,
        sample_index=sample_index,
        response_text=text,
        token_logprobs=token_logprobs,
        embedding=embedding,
        answer=None,  # force in-text extraction unless a test sets it
        answer_token_logprobs=answer_token_logprobs,
    )


def make_set(
    answers: list[str | None],
    *,
    query_id: str = "q1",
    gold: tuple[str, ...] | None = ("a",),
    group: str = "main",
) -> SampleSet:
    """A sample set whose responses box the given answers (None = no box)."""
    query = make_query(query_id, gold=gold, group=group)
    samples = tuple(
        make_generation(query_id, j, answer=answer) for j, answer in enumerate(answers)
    )
    return SampleSet(query=query, samples=samples)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
