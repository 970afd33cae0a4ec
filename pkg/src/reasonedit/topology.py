"""Topology diagnostics for multimodal embeddings.

Builds expected-partition node sets over sampled batches of image-text
pairs, estimates modularity against those partitions by Monte Carlo over
independent batches, and computes the two signed modality biases. Unimodal
partitions use the n x n cross-product of batch images and texts grouped by
image (vision) or text (language) identity; the bimodal partition clusters
each anchor pair with its augmented views and isolates every mismatched
combination in a singleton, for n + 4n(n-1) nodes in total.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources as importlib_resources
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import ArgumentError
from .network import Partition, build_adjacency, modularity
from .provider import Provider

Mode = Literal["vision", "language", "bimodal"]


@dataclass(frozen=True)
class PairNode:
    image_ref: str
    text: str


@dataclass(frozen=True)
class BatchSpec:
    """Sampling plan: n pairs per batch, `batches` independent batches.

    aug_per_anchor defaults to 2(n-1) so the bimodal node set keeps its
    balanced anchor/augmentation/mismatch structure at every n.
    """

    n: int = 10
    batches: int = 10
    seed: int = 0
    aug_per_anchor: int | None = None

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ArgumentError("batch size n must be at least 2")
        if self.batches < 1:
            raise ArgumentError("batch count must be at least 1")
        if self.aug_per_anchor is not None and self.aug_per_anchor < 2:
            raise ArgumentError("aug_per_anchor must be at least 2")

    @property
    def augmentations(self) -> int:
        return self.aug_per_anchor if self.aug_per_anchor is not None else 2 * (self.n - 1)


@dataclass(frozen=True)
class ModularityEstimate:
    mean: float
    std: float
    per_batch: tuple[float, ...]
    mode: Mode


@dataclass(frozen=True)
class BiasEstimate:
    mean: float
    std: float
    mode: Literal["vision", "language"]


def build_vision_nodes(batch: Sequence[PairNode]) -> tuple[list[PairNode], Partition]:
    """Cross-product nodes grouped by image identity: node <i_a, t_b> gets
    cluster label a, giving n clusters of n nodes."""
    return _cross_product_nodes(batch, by="image")


def build_language_nodes(batch: Sequence[PairNode]) -> tuple[list[PairNode], Partition]:
    """Mirror of build_vision_nodes with labels by text identity."""
    return _cross_product_nodes(batch, by="text")


def _cross_product_nodes(
    batch: Sequence[PairNode], by: str
) -> tuple[list[PairNode], Partition]:
    n = len(batch)
    if n < 2:
        raise ArgumentError("need at least two pairs per batch")
    images = [p.image_ref for p in batch]
    texts = [p.text for p in batch]
    if by == "image" and len(set(images)) != n:
        raise ArgumentError("images within a batch must be distinct")
    if by == "text" and len(set(texts)) != n:
        raise ArgumentError("texts within a batch must be distinct")
    nodes: list[PairNode] = []
    labels: list[int] = []
    for a in range(n):
        for b in range(n):
            nodes.append(PairNode(image_ref=images[a], text=texts[b]))
            labels.append(a if by == "image" else b)
    return nodes, Partition.from_labels(labels)


def build_bimodal_nodes(
    batch: Sequence[PairNode],
    provider: Provider,
    aug_per_anchor: int | None = None,
) -> tuple[list[PairNode], Partition]:
    """Anchors plus their augmented views share a cluster; every mismatched
    combination is a singleton. The augmentation budget splits evenly
    between image-augmented and text-augmented views.
    """
    n = len(batch)
    if n < 2:
        raise ArgumentError("need at least two pairs per batch")
    total_aug = aug_per_anchor if aug_per_anchor is not None else 2 * (n - 1)
    image_aug = total_aug // 2
    text_aug = total_aug - image_aug

    nodes: list[PairNode] = []
    labels: list[int] = []
    for k, anchor in enumerate(batch):
        nodes.append(anchor)
        labels.append(k)
        variants = provider.augment(anchor.image_ref, anchor.text, total_aug)
        for ref, _ in variants[:image_aug]:
            nodes.append(PairNode(image_ref=ref, text=anchor.text))
            labels.append(k)
        for _, text in variants[image_aug : image_aug + text_aug]:
            nodes.append(PairNode(image_ref=anchor.image_ref, text=text))
            labels.append(k)

    next_label = n
    for k, anchor in enumerate(batch):
        for j, other in enumerate(batch):
            if j == k:
                continue
            nodes.append(PairNode(image_ref=anchor.image_ref, text=other.text))
            labels.append(next_label)
            next_label += 1
            nodes.append(PairNode(image_ref=other.image_ref, text=anchor.text))
            labels.append(next_label)
            next_label += 1
    return nodes, Partition.from_labels(labels)


def iter_batches(
    pool: Sequence[PairNode], spec: BatchSpec
) -> Iterable[list[PairNode]]:
    """Yield `spec.batches` batches of n pairs, sampling without replacement
    within a batch and across batches until the pool is exhausted, then
    starting over with a fresh permutation."""
    if len(pool) < spec.n:
        raise ArgumentError(
            f"pair pool has {len(pool)} entries, need at least n={spec.n}"
        )
    rng = np.random.default_rng(spec.seed)
    queue: list[int] = []
    for _ in range(spec.batches):
        if len(queue) < spec.n:
            queue = list(rng.permutation(len(pool)))
        picked, queue = queue[: spec.n], queue[spec.n :]
        yield [pool[i] for i in picked]


def sample_modularity(
    pool: Sequence[PairNode],
    mode: Mode,
    spec: BatchSpec,
    embedder,
) -> ModularityEstimate:
    """Monte Carlo modularity estimate: for each batch, build the node set
    for `mode`, embed every node, construct the similarity network, and
    score it against the expected partition; average over batches.

    `embedder` exposes .embed(image_ref, text) and, for bimodal mode,
    .provider for augmentation.
    """
    if mode not in ("vision", "language", "bimodal"):
        raise ArgumentError(f"unknown mode {mode!r}")
    per_batch: list[float] = []
    for batch in iter_batches(pool, spec):
        if mode == "vision":
            nodes, partition = build_vision_nodes(batch)
        elif mode == "language":
            nodes, partition = build_language_nodes(batch)
        else:
            nodes, partition = build_bimodal_nodes(
                batch, embedder.provider, spec.aug_per_anchor
            )
        vectors = np.stack(
            [np.asarray(embedder.embed(node.image_ref, node.text), dtype=np.float64)
             for node in nodes]
        )
        net = build_adjacency(vectors, node_ids=[(n.image_ref, n.text) for n in nodes])
        per_batch.append(modularity(net, partition))
    values = np.asarray(per_batch, dtype=np.float64)
    return ModularityEstimate(
        mean=float(values.mean()),
        std=float(values.std()),
        per_batch=tuple(per_batch),
        mode=mode,
    )


@dataclass(frozen=True)
class BiasConfig:
    """Variant budgets for the star-shaped bias subgraphs; the perturbation
    side uses augmented views, the mismatch side samples from a pool."""

    aug_variants: int = 4
    mismatch_count: int = 8


def vision_bias(
    pool: Sequence[PairNode],
    spec: BatchSpec,
    embedder,
    mismatch_texts: Sequence[str],
    config: BiasConfig = BiasConfig(),
) -> BiasEstimate:
    """Mean anchor distance to (augmented image, same text) views minus mean
    distance to (same image, mismatched text) views. Positive values mean
    the embedding moves farther under image perturbation than under a text
    swap: over-sensitivity to the vision modality."""
    return _bias(pool, spec, embedder, list(mismatch_texts), config, mode="vision")


def language_bias(
    pool: Sequence[PairNode],
    spec: BatchSpec,
    embedder,
    mismatch_images: Sequence[str],
    config: BiasConfig = BiasConfig(),
) -> BiasEstimate:
    """Mirror of vision_bias: (same image, perturbed text) views against
    (mismatched image, same text) views."""
    return _bias(pool, spec, embedder, list(mismatch_images), config, mode="language")


def _bias(
    pool: Sequence[PairNode],
    spec: BatchSpec,
    embedder,
    mismatch_pool: list[str],
    config: BiasConfig,
    mode: Literal["vision", "language"],
) -> BiasEstimate:
    if not mismatch_pool:
        raise ArgumentError("mismatch pool must be nonempty")
    provider = embedder.provider
    per_anchor: list[float] = []
    for batch_index, batch in enumerate(iter_batches(pool, spec)):
        rng = np.random.default_rng([spec.seed, 7 if mode == "vision" else 11, batch_index])
        for anchor in batch:
            anchor_vec = np.asarray(
                embedder.embed(anchor.image_ref, anchor.text), dtype=np.float64
            )
            variants = provider.augment(anchor.image_ref, anchor.text, config.aug_variants)
            if mode == "vision":
                perturbed = [(ref, anchor.text) for ref, _ in variants]
            else:
                perturbed = [(anchor.image_ref, text) for _, text in variants]

            own = anchor.text if mode == "vision" else anchor.image_ref
            candidates = [m for m in mismatch_pool if m != own] or mismatch_pool
            take = min(config.mismatch_count, len(candidates))
            chosen = rng.choice(len(candidates), size=take, replace=False)
            if mode == "vision":
                mismatched = [(anchor.image_ref, candidates[i]) for i in chosen]
            else:
                mismatched = [(candidates[i], anchor.text) for i in chosen]

            perturbed_mean = _mean_distance(anchor_vec, perturbed, embedder)
            mismatched_mean = _mean_distance(anchor_vec, mismatched, embedder)
            per_anchor.append(perturbed_mean - mismatched_mean)
    values = np.asarray(per_anchor, dtype=np.float64)
    return BiasEstimate(mean=float(values.mean()), std=float(values.std()), mode=mode)


def _mean_distance(anchor_vec: np.ndarray, pairs: list[tuple[str, str]], embedder) -> float:
    distances = [
        float(np.linalg.norm(
            anchor_vec - np.asarray(embedder.embed(ref, text), dtype=np.float64)
        ))
        for ref, text in pairs
    ]
    return float(np.mean(distances))


def load_pair_pool(lines: Iterable[str]) -> list[PairNode]:
    """Pair pool file: one JSON object per line with image_ref and text."""
    import json

    from .errors import InputFormatError

    pool: list[PairNode] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            pool.append(PairNode(image_ref=obj["image_ref"], text=obj["text"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputFormatError(f"bad pair record: {exc}", line=lineno) from exc
    return pool


def load_line_pool(lines: Iterable[str]) -> list[str]:
    """Plain-text pool: one entry per line, blanks skipped."""
    return [line.strip() for line in lines if line.strip()]


def default_fact_pool() -> list[str]:
    """Packaged pool of diverse common fact sentences used as the default
    mismatched-text resource."""
    text = (
        importlib_resources.files("reasonedit.resources")
        .joinpath("fact_sentences.txt")
        .read_text("utf-8")
    )
    return load_line_pool(text.splitlines())
