"""Inference-time retrieval over the codebook.

A query is rejected when its minimum key distance exceeds the p-th
nearest-rank percentile of pairwise key distances; otherwise the K nearest
entries supply the context sentences, deduplicated in first-occurrence
order and prepended to the question.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .codebook import Codebook
from .errors import ArgumentError

# Above this entry count the percentile uses all pairs among a uniform
# sample of entries, bounding the quadratic cost.
PAIR_SAMPLE_LIMIT = 2048


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 5
    percentile: float = 50.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ArgumentError("k must be at least 1")
        if not 0.0 < self.percentile <= 100.0:
            raise ArgumentError("percentile must be in (0, 100]")


@dataclass(frozen=True)
class RetrievalResult:
    retrieved: bool
    sentences: tuple[str, ...]
    neighbor_ids: tuple[int, ...]
    distances: tuple[float, ...]
    threshold: float


def _pairwise_distances(keys: np.ndarray) -> np.ndarray:
    n = keys.shape[0]
    if n > PAIR_SAMPLE_LIMIT:
        rng = np.random.default_rng(n)  # deterministic for a given size
        chosen = rng.choice(n, size=PAIR_SAMPLE_LIMIT, replace=False)
        keys = keys[np.sort(chosen)]
        n = PAIR_SAMPLE_LIMIT
    diff = keys[:, None, :] - keys[None, :, :]
    distances = np.sqrt(np.einsum("uvd,uvd->uv", diff, diff))
    upper = np.triu_indices(n, k=1)
    return distances[upper]


def rejection_threshold(cb: Codebook, percentile: float) -> float:
    """Nearest-rank percentile of the unordered pairwise key distances:
    sorted ascending, element ceil(p/100 * M) (1-indexed). With fewer than
    two keys retrieval is never rejected (returns +inf)."""
    if not 0.0 < percentile <= 100.0:
        raise ArgumentError("percentile must be in (0, 100]")
    cached = cb._threshold_cache.get(percentile)
    if cached is not None:
        return cached
    if len(cb.entries) < 2:
        threshold = math.inf
    else:
        distances = np.sort(_pairwise_distances(cb.keys_matrix()))
        count = distances.size
        rank = math.ceil(Fraction(percentile) * count / 100)
        rank = min(max(rank, 1), count)
        threshold = float(distances[rank - 1])
    cb._threshold_cache[percentile] = threshold
    return threshold


def retrieve(cb: Codebook, query: np.ndarray, cfg: RetrievalConfig) -> RetrievalResult:
    """K-nearest retrieval with percentile rejection.

    Neighbor ties break by entry insertion order; sentences are the
    neighbors' value lists concatenated in neighbor order and deduplicated
    (whitespace-trimmed, case-sensitive) keeping first occurrences.
    """
    query_arr = np.asarray(query, dtype=np.float64).reshape(-1)
    if cb.entries and query_arr.size != cb.entries[0].key.size:
        raise ArgumentError(
            f"query dim {query_arr.size} does not match key dim {cb.entries[0].key.size}"
        )
    threshold = rejection_threshold(cb, cfg.percentile)
    if not cb.entries:
        return RetrievalResult(retrieved=False, sentences=(), neighbor_ids=(),
                               distances=(), threshold=threshold)

    keys = cb.keys_matrix()
    distances = np.linalg.norm(keys - query_arr, axis=1)
    if float(distances.min()) > threshold:
        return RetrievalResult(retrieved=False, sentences=(), neighbor_ids=(),
                               distances=(), threshold=threshold)

    order = np.argsort(distances, kind="stable")[: cfg.k]
    sentences: list[str] = []
    seen: set[str] = set()
    for idx in order:
        for sentence in cb.entries[int(idx)].values:
            trimmed = sentence.strip()
            if trimmed not in seen:
                seen.add(trimmed)
                sentences.append(trimmed)
    return RetrievalResult(
        retrieved=True,
        sentences=tuple(sentences),
        neighbor_ids=tuple(int(i) for i in order),
        distances=tuple(float(distances[int(i)]) for i in order),
        threshold=threshold,
    )


DEFAULT_PROMPT_TEMPLATE = "{context}\n{question}"


def assemble_prompt(sentences: Sequence[str], question: str,
                    template: str | None = None) -> str:
    """Context sentences joined by single spaces, then the question, under
    the given template (default: context, newline, question verbatim).
    No context always leaves the question unchanged."""
    if not question:
        raise ArgumentError("question must be nonempty")
    if not sentences:
        return question
    template = template or DEFAULT_PROMPT_TEMPLATE
    return template.format(context=" ".join(sentences), question=question)
