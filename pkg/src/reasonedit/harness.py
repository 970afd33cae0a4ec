"""Editing evaluation: the six metrics over prediction records, error-chain
construction for chain-of-error scoring, the sequential editing protocol,
and locality-set preparation.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .codebook import Codebook, add_edit, storage_per_edit
from .dual import DualEmbedder
from .edits import Edit, EvalSample, EVAL_KINDS
from .errors import ArgumentError, ProviderError, ValidationError
from .patchify import PatchifyConfig, yesno_prob
from .provider import Provider
from .retrieval import RetrievalConfig, RetrievalResult, retrieve

# Metric name per record kind. Locality compares against the pre-edit
# prediction; every other metric against the reference answer.
METRIC_NAMES = {
    "edit": "reliability",
    "unrelated": "locality",
    "t_gen": "t_gen",
    "i_gen": "i_gen",
    "r_gen": "r_gen",
    "coe_gen": "coe_gen",
}

CHAIN_VERIFY_TEMPLATE = (
    "Given the image, is the following statement correct? Statement:'{statement}'"
)

MAX_CHAIN_STATEMENTS = 16


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    kind: str
    predicted: str
    reference: str
    parent_edit_id: str | None = None
    pre_edit_predicted: str | None = None

    def validate(self) -> None:
        if self.kind not in EVAL_KINDS:
            raise ValidationError(f"unknown kind {self.kind!r}")
        if self.kind == "unrelated" and self.pre_edit_predicted is None:
            raise ValidationError(
                f"record {self.sample_id!r}: unrelated records need pre_edit_predicted"
            )


def metric(records: Sequence[PredictionRecord], kind: str,
           normalize: Callable[[str], str] | None = None) -> float | None:
    """Mean exact-match for one record kind. Locality (kind=unrelated)
    matches against the pre-edit prediction; everything else against the
    reference answer. Returns None (absent) for empty input."""
    if kind not in EVAL_KINDS:
        raise ArgumentError(f"unknown kind {kind!r}")
    if not records:
        return None
    for record in records:
        if record.kind != kind:
            raise ArgumentError(
                f"record {record.sample_id!r} has kind {record.kind!r}, expected {kind!r}"
            )
        record.validate()
    norm = normalize or (lambda s: s)
    if kind == "unrelated":
        hits = sum(1 for r in records if norm(r.predicted) == norm(r.pre_edit_predicted))
    else:
        hits = sum(1 for r in records if norm(r.predicted) == norm(r.reference))
    return hits / len(records)


@dataclass(frozen=True)
class MetricReport:
    values: dict[str, float | None]
    counts: dict[str, int]
    storage_kb_per_edit: float | None = None

    def to_json(self) -> dict:
        return {
            "metrics": dict(self.values),
            "counts": dict(self.counts),
            "storage_kb_per_edit": self.storage_kb_per_edit,
        }


def build_report(records: Sequence[PredictionRecord],
                 cb: Codebook | None = None,
                 normalize: Callable[[str], str] | None = None) -> MetricReport:
    values: dict[str, float | None] = {}
    counts: dict[str, int] = {}
    for kind in EVAL_KINDS:
        subset = [r for r in records if r.kind == kind]
        counts[METRIC_NAMES[kind]] = len(subset)
        values[METRIC_NAMES[kind]] = metric(subset, kind, normalize)
    storage = None
    if cb is not None and cb.edit_count > 0:
        storage = storage_per_edit(cb)
    return MetricReport(values=values, counts=counts, storage_kb_per_edit=storage)


@dataclass(frozen=True)
class ErrorChain:
    edit_id: str
    sentences: tuple[str, ...]  # ordered subset of the edit's reasoning
    subset_count_checked: int


def _nonempty_subsets(count: int) -> Iterable[tuple[int, ...]]:
    for mask in range(1, 1 << count):
        yield tuple(i for i in range(count) if mask >> i & 1)


def error_chain(edit: Edit, provider: Provider,
                image_ref: str | None = None,
                template: str = CHAIN_VERIFY_TEMPLATE) -> ErrorChain:
    """Verify every nonempty ordered subset of the edit's reasoning against
    the image; subsets with P(no) > 0.5 are error-inducing and their
    sentences union into the chain (in original reasoning order)."""
    statements = edit.reasoning
    if len(statements) > MAX_CHAIN_STATEMENTS:
        raise ArgumentError(
            f"{len(statements)} statements exceed the 2^n enumeration guard "
            f"({MAX_CHAIN_STATEMENTS})"
        )
    ref = image_ref if image_ref is not None else edit.image_ref
    if not statements:
        return ErrorChain(edit_id=edit.edit_id, sentences=(), subset_count_checked=0)

    failing: set[int] = set()
    checked = 0
    for subset in _nonempty_subsets(len(statements)):
        joined = " ".join(statements[i] for i in subset)
        score = provider.yesno(ref, None, joined, template)
        checked += 1
        if yesno_prob(score) < 0.5:  # P(no) > 0.5
            failing.update(subset)
    ordered = tuple(statements[i] for i in sorted(failing))
    return ErrorChain(edit_id=edit.edit_id, sentences=ordered, subset_count_checked=checked)


class RetrievalAnswerer:
    """Stand-in for the external answering model during sequential runs.

    Behavior: with no retrieval the pre-edit answer stands; with retrieval
    the reference is produced only when it appears inside a retrieved
    sentence, otherwise the answerer is misled to a distractor. Unrelated
    samples were answered correctly pre-edit, so their pre-edit answer is
    the reference.
    """

    def pre_edit(self, sample: EvalSample) -> str:
        if sample.kind == "unrelated":
            return sample.reference_answer
        return f"__pre__:{sample.sample_id}"

    def answer(self, sample: EvalSample, result: RetrievalResult) -> str:
        if not result.retrieved:
            return self.pre_edit(sample)
        if any(sample.reference_answer in sentence for sentence in result.sentences):
            return sample.reference_answer
        for candidate in sample.candidates:
            if candidate != sample.reference_answer:
                return candidate
        return "__distracted__"


@dataclass(frozen=True)
class SequentialConfig:
    eval_every: int = 200
    batch: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eval_every < 1 or self.batch < 1:
            raise ArgumentError("eval_every and batch must be positive")


@dataclass(frozen=True)
class Checkpoint:
    step: int
    metrics: dict[str, float | None]
    counts: dict[str, int]
    seconds_per_edit: float
    kb_per_edit: float

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "metrics": dict(self.metrics),
            "counts": dict(self.counts),
            "seconds_per_edit": self.seconds_per_edit,
            "kb_per_edit": self.kb_per_edit,
        }


@dataclass
class Trajectory:
    checkpoints: list[Checkpoint] = field(default_factory=list)
    completed_edits: int = 0
    error: str | None = None


def sequential_run(
    edits: Sequence[Edit],
    eval_pool: Sequence[EvalSample],
    cb: Codebook,
    embedder: DualEmbedder,
    cfg: SequentialConfig = SequentialConfig(),
    retrieval_cfg: RetrievalConfig = RetrievalConfig(),
    answerer: RetrievalAnswerer | None = None,
    merge_enabled: bool = True,
    patch_config: PatchifyConfig = PatchifyConfig(),
) -> Trajectory:
    """Apply the edit stream in order; every eval_every edits, evaluate on a
    seeded random batch of accumulated edits (clamped to what exists) plus
    the eval-pool samples attached to them, recording per-metric values,
    mean edit latency, and storage per edit.

    A provider failure truncates the trajectory at the last completed edit
    and records the error instead of raising.
    """
    if not edits:
        raise ArgumentError("edit stream is empty")
    answerer = answerer or RetrievalAnswerer()
    rng = np.random.default_rng(cfg.seed)
    by_parent: dict[str, list[EvalSample]] = {}
    unrelated: list[EvalSample] = []
    for sample in eval_pool:
        if sample.kind == "unrelated":
            unrelated.append(sample)
        elif sample.parent_edit_id is not None:
            by_parent.setdefault(sample.parent_edit_id, []).append(sample)

    trajectory = Trajectory()
    applied: list[Edit] = []
    window_seconds: list[float] = []
    for position, edit in enumerate(edits, start=1):
        started = time.perf_counter()
        try:
            add_edit(cb, edit, embedder, merge_enabled=merge_enabled,
                     patch_config=patch_config)
        except ProviderError as exc:
            trajectory.error = f"edit {edit.edit_id!r}: {exc}"
            break
        window_seconds.append(time.perf_counter() - started)
        applied.append(edit)
        trajectory.completed_edits = position

        if position % cfg.eval_every == 0:
            batch_size = min(cfg.batch, len(applied))
            chosen = rng.choice(len(applied), size=batch_size, replace=False)
            batch = [applied[int(i)] for i in sorted(chosen)]
            records = _evaluate_batch(batch, by_parent, unrelated, cb, embedder,
                                      retrieval_cfg, answerer, rng)
            report = build_report(records, cb)
            trajectory.checkpoints.append(Checkpoint(
                step=position,
                metrics=report.values,
                counts=report.counts,
                seconds_per_edit=float(np.mean(window_seconds)) if window_seconds else 0.0,
                kb_per_edit=report.storage_kb_per_edit or 0.0,
            ))
            window_seconds = []
    return trajectory


def _evaluate_batch(
    batch: Sequence[Edit],
    by_parent: dict[str, list[EvalSample]],
    unrelated: Sequence[EvalSample],
    cb: Codebook,
    embedder: DualEmbedder,
    retrieval_cfg: RetrievalConfig,
    answerer: RetrievalAnswerer,
    rng: np.random.Generator,
) -> list[PredictionRecord]:
    samples: list[EvalSample] = []
    for edit in batch:
        samples.append(EvalSample(
            sample_id=f"edit::{edit.edit_id}",
            kind="edit",
            image_ref=edit.image_ref,
            question=edit.question,
            reference_answer=edit.answer,
            parent_edit_id=edit.edit_id,
        ))
        samples.extend(by_parent.get(edit.edit_id, ()))
    if unrelated:
        take = min(len(batch), len(unrelated))
        chosen = rng.choice(len(unrelated), size=take, replace=False)
        samples.extend(unrelated[int(i)] for i in sorted(chosen))

    records: list[PredictionRecord] = []
    for sample in samples:
        query = embedder.embed(sample.image_ref, sample.question)
        result = retrieve(cb, query, retrieval_cfg)
        records.append(PredictionRecord(
            sample_id=sample.sample_id,
            kind=sample.kind,
            predicted=answerer.answer(sample, result),
            reference=sample.reference_answer,
            parent_edit_id=sample.parent_edit_id,
            pre_edit_predicted=answerer.pre_edit(sample),
        ))
    return records


def _token_set(text: str) -> frozenset[str]:
    return frozenset(text.split())


def jaccard(a: str, b: str) -> float:
    """Word-overlap similarity over whitespace tokens."""
    left, right = _token_set(a), _token_set(b)
    if not left and not right:
        return 1.0
    union = left | right
    return len(left & right) / len(union)


def prepare_locality_set(
    correct_samples: Sequence[EvalSample],
    edits: Sequence[Edit],
    seed: int = 0,
    random_count: int = 100,
    similar_count: int = 100,
    top_per_edit: int = 3,
) -> list[EvalSample]:
    """Build the unrelated evaluation set from correctly-answered samples:
    a seeded random subset plus, per edit, the top-k most word-overlap
    similar questions (ties by sample order), deduplicated and trimmed.
    Every output record is re-kinded as unrelated."""
    if not correct_samples:
        raise ArgumentError("corpus of correct samples is empty")
    rng = np.random.default_rng(seed)
    take = min(random_count, len(correct_samples))
    chosen = rng.choice(len(correct_samples), size=take, replace=False)
    picked: list[EvalSample] = [correct_samples[int(i)] for i in sorted(chosen)]
    seen = {s.sample_id for s in picked}

    similar: list[EvalSample] = []
    for edit in edits:
        scored = sorted(
            enumerate(correct_samples),
            key=lambda item: (-jaccard(edit.question, item[1].question), item[0]),
        )
        for _, sample in scored[:top_per_edit]:
            if sample.sample_id not in seen:
                seen.add(sample.sample_id)
                similar.append(sample)
    picked.extend(similar[:similar_count])

    return [
        EvalSample(
            sample_id=s.sample_id,
            kind="unrelated",
            image_ref=s.image_ref,
            question=s.question,
            reference_answer=s.reference_answer,
            parent_edit_id=None,
            candidates=s.candidates,
        )
        for s in picked
    ]
