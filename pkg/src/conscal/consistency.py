"""Answer extraction, agreement scoring, and proxy-target construction.

A set of k sampled responses to one query votes on an answer.  The empirical
share of samples agreeing with an answer ``a`` is its self-consistency score

    s = (1/k) * #{ j : answer_j == a },

and the modal answer's share is the proxy confidence target used to train the
calibrator without any correctness labels.  Answers are compared after a
deliberately minimal normalization (strip edge whitespace, casefold); no
numeric canonicalization is attempted, so "0.50" and "0.5" stay distinct.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import seeding
from .errors import DataError, RecordError
from .records import GenerationRecord, SampleSet

log = logging.getLogger(__name__)

_BOX_MARKER = "\\boxed{"


def boxed_groups(text: str) -> list[str]:
    """Contents of every balanced ``\\boxed{...}`` group, in start order.

    Braces nest: ``\\boxed{\\frac{1}{2}}`` yields ``\\frac{1}{2}``.  A group
    whose braces never balance is skipped.
    """
    groups: list[str] = []
    start = text.find(_BOX_MARKER)
    while start != -1:
        depth = 1
        i = start + len(_BOX_MARKER)
        while i < len(text) and depth > 0:
            ch = text[i]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
            i += 1
        if depth == 0:
            groups.append(text[start + len(_BOX_MARKER) : i - 1])
        start = text.find(_BOX_MARKER, start + 1)
    return groups


def extract_boxed(text: str) -> str | None:
    """Return the content of the last balanced ``\\boxed{...}`` group."""
    groups = boxed_groups(text)
    return groups[-1] if groups else None


def normalize_answer(raw: str) -> str:
    """Strip edge whitespace and casefold.  Nothing else; idempotent."""
    return raw.strip().casefold()


@dataclass(frozen=True)
class AnswerKey:
    """A gold answer with acceptable aliases, all normalized."""

    canonical: str
    aliases: tuple[str, ...] = ()

    @classmethod
    def from_gold(cls, gold_answers: Sequence[str]) -> "AnswerKey":
        if not gold_answers:
            raise DataError("gold_answers must be nonempty to build an answer key")
        normalized = [normalize_answer(a) for a in gold_answers]
        canonical = normalized[0]
        aliases = tuple(dict.fromkeys(a for a in normalized[1:] if a != canonical))
        return cls(canonical=canonical, aliases=aliases)


def is_match(answer: str, key: AnswerKey) -> bool:
    """True when a normalized answer equals the key or one of its aliases."""
    normalized = normalize_answer(answer)
    return normalized == key.canonical or normalized in key.aliases


@dataclass(frozen=True)
class ConsistencyTarget:
    """The modal answer of a sample set and its agreement share.

    ``selected_sample_index`` is the representative generation whose response
    carries the modal answer (the lowest sample_index among them); ``s`` is
    the modal share over all ``k`` samples, including samples that produced no
    extractable answer (those dilute ``s`` but can never be selected).
    """

    query_id: str
    selected_sample_index: int
    answer: str
    s: float
    k: int


def canonical_answer(generation: GenerationRecord) -> str | None:
    """Normalized answer of one generation, or None when there is none.

    A pre-extracted ``answer`` field wins over in-text extraction; when both
    exist and disagree a warning is logged, since that usually means the
    upstream extractor and this one diverge.
    """
    extracted = extract_boxed(generation.response_text)
    provided = generation.answer
    if provided is not None and extracted is not None:
        if normalize_answer(provided) != normalize_answer(extracted):
            log.warning(
                "query %s sample %d: pre-extracted answer %r disagrees with boxed %r",
                generation.query_id,
                generation.sample_index,
                provided,
                extracted,
            )
    raw = provided if provided is not None else extracted
    return normalize_answer(raw) if raw is not None else None


def _sample_answers(sample_set: SampleSet) -> list[str | None]:
    return [canonical_answer(g) for g in sample_set.samples]


def self_consistency(sample_set: SampleSet, answer: str) -> float:
    """Share of samples whose answer matches ``answer`` (normalized).

    Samples without an extractable answer count toward k as unique,
    never-matching answers.
    """
    if sample_set.k == 0:
        raise DataError(f"query {sample_set.query_id}: empty sample set")
    target = normalize_answer(answer)
    hits = sum(1 for a in _sample_answers(sample_set) if a is not None and a == target)
    return hits / sample_set.k


def _modal(sample_set: SampleSet) -> tuple[str, int, int]:
    """(modal answer, its count, representative sample_index)."""
    answers = _sample_answers(sample_set)
    counts = Counter(a for a in answers if a is not None)
    if not counts:
        raise DataError(
            f"query {sample_set.query_id}: no extractable answer in any of "
            f"{sample_set.k} samples"
        )
    best = max(counts.values())
    # Ties break toward the lexicographically smallest answer string.
    modal = min(a for a, c in counts.items() if c == best)
    for generation, answer in zip(sample_set.samples, answers):
        if answer == modal:
            return modal, best, generation.sample_index
    raise AssertionError("unreachable: modal answer must appear in samples")


def build_target(sample_set: SampleSet) -> ConsistencyTarget:
    """Modal answer, its share, and the representative generation."""
    modal, count, selected = _modal(sample_set)
    return ConsistencyTarget(
        query_id=sample_set.query_id,
        selected_sample_index=selected,
        answer=modal,
        s=count / sample_set.k,
        k=sample_set.k,
    )


def test_time_sc(sample_set: SampleSet) -> tuple[str, float]:
    """Deployment-side majority vote: (modal answer, its share).

    Same tie-breaking as :func:`build_target`.
    """
    modal, count, _ = _modal(sample_set)
    return modal, count / sample_set.k


def subsample_targets(sample_set: SampleSet, k: int, seed: int) -> ConsistencyTarget:
    """Target built from ``k`` samples drawn uniformly without replacement.

    Deterministic given ``(sample_set, k, seed)``.  Selected sample indices
    keep their original values.
    """
    if not 1 <= k <= sample_set.k:
        raise DataError(
            f"query {sample_set.query_id}: cannot subsample {k} of {sample_set.k} samples"
        )
    rng = seeding.generator(seed)
    chosen = rng.choice(sample_set.k, size=k, replace=False)
    subset = SampleSet(
        query=sample_set.query,
        samples=tuple(sample_set.samples[i] for i in sorted(chosen.tolist())),
    )
    return build_target(subset)


# ---------------------------------------------------------------------------
# target file round trip
# ---------------------------------------------------------------------------


def write_targets(path: str, targets: Iterable[ConsistencyTarget]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for t in targets:
            obj = {
                "query_id": t.query_id,
                "selected_sample_index": t.selected_sample_index,
                "answer": t.answer,
                "s": t.s,
                "k": t.k,
            }
            handle.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")


def load_targets(path: str) -> list[ConsistencyTarget]:
    targets: list[ConsistencyTarget] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise RecordError(
                    f"{path}:{lineno}: invalid JSON ({exc.msg})", path=path, line=lineno
                ) from exc
            problems: list[str] = []
            if not isinstance(obj, dict):
                problems.append("record must be a JSON object")
            else:
                if not isinstance(obj.get("query_id"), str) or not obj.get("query_id"):
                    problems.append("query_id must be a nonempty string")
                idx = obj.get("selected_sample_index")
                if not isinstance(idx, int) or isinstance(idx, bool) or idx < 0:
                    problems.append("selected_sample_index must be a nonnegative integer")
                if not isinstance(obj.get("answer"), str):
                    problems.append("answer must be a string")
                s = obj.get("s")
                k = obj.get("k")
                if not isinstance(k, int) or isinstance(k, bool) or k < 1:
                    problems.append("k must be a positive integer")
                if not isinstance(s, (int, float)) or isinstance(s, bool) or not 0.0 <= s <= 1.0:
                    problems.append("s must be a number in [0, 1]")
                elif isinstance(k, int) and not isinstance(k, bool) and k >= 1:
                    if not math.isclose(s * k, round(s * k), abs_tol=1e-9):
                        problems.append("s * k must be an integer sample count")
                if isinstance(obj.get("query_id"), str):
                    if obj["query_id"] in seen:
                        problems.append(f"duplicate target for query {obj['query_id']!r}")
                    else:
                        seen.add(obj["query_id"])
            if problems:
                raise RecordError(f"{path}:{lineno}: {problems[0]}", path=path, line=lineno)
            targets.append(
                ConsistencyTarget(
                    query_id=obj["query_id"],
                    selected_sample_index=obj["selected_sample_index"],
                    answer=obj["answer"],
                    s=float(obj["s"]),
                    k=obj["k"],
                )
            )
    return targets
