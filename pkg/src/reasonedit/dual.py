"""Dual embedding: a selected vision-layer embedding of the image-text pair
concatenated with a weighted sentence embedding of the text.

The vision layer is chosen by maximizing bimodal sample modularity; the
text weight by maximizing the harmonic mean of vision and language sample
modularity, which trades off alignment between the two unimodal topologies.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .edits import BBox
from .errors import ArgumentError, NoFeasibleWeightError
from .provider import EmbeddingVector, LayerSpec, Provider
from .topology import BatchSpec, PairNode, sample_modularity


@dataclass(frozen=True)
class DualConfig:
    """Fitted embedding configuration. The hash pins a codebook to the
    provider manifest and fit that produced it."""

    layer: LayerSpec
    text_weight: float
    vision_dim: int
    text_dim: int
    manifest_hash: str = ""

    def __post_init__(self) -> None:
        if self.text_weight <= 0:
            raise ArgumentError("text weight must be positive")

    @property
    def dim(self) -> int:
        return self.vision_dim + self.text_dim

    def to_json(self) -> dict:
        return {
            "layer": self.layer.to_json(),
            "text_weight": self.text_weight,
            "vision_dim": self.vision_dim,
            "text_dim": self.text_dim,
            "manifest_hash": self.manifest_hash,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DualConfig":
        return cls(
            layer=LayerSpec.from_json(obj["layer"]),
            text_weight=float(obj["text_weight"]),
            vision_dim=int(obj["vision_dim"]),
            text_dim=int(obj["text_dim"]),
            manifest_hash=obj.get("manifest_hash", ""),
        )

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DualConfig":
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))


def select_layer(sweep: Sequence[tuple[LayerSpec, float]]) -> LayerSpec:
    """Pick the vision layer with the highest bimodal sample modularity;
    ties resolve to the lowest layer index."""
    if not sweep:
        raise ArgumentError("layer sweep must be nonempty")
    for layer, _ in sweep:
        if layer.block != "vision":
            raise ArgumentError(f"layer sweep must contain vision layers, got {layer.block!r}")
    best_layer, best_score = sweep[0]
    for layer, score in sweep[1:]:
        if score > best_score or (score == best_score and layer.index < best_layer.index):
            best_layer, best_score = layer, score
    return best_layer


def assemble(z_vis: EmbeddingVector, z_text: EmbeddingVector, weight: float) -> EmbeddingVector:
    """Concatenate the vision embedding with the weight-scaled text embedding."""
    if weight <= 0:
        raise ArgumentError("text weight must be positive")
    values = np.concatenate(
        [z_vis.values.astype(np.float32), (z_text.values * np.float32(weight)).astype(np.float32)]
    )
    return EmbeddingVector.create(values, z_vis.layer)


@dataclass(frozen=True)
class WeightScore:
    weight: float
    q_vis: float
    q_lang: float
    score: float  # harmonic mean, or -inf when either modularity is <= 0


def harmonic_mean(q_vis: float, q_lang: float) -> float:
    if q_vis <= 0 or q_lang <= 0:
        return float("-inf")
    return 2.0 * q_vis * q_lang / (q_vis + q_lang)


def select_weight(
    grid: Sequence[float],
    evaluator: Callable[[float], tuple[float, float]],
) -> tuple[float, list[WeightScore]]:
    """Evaluate the vision/language modularity trade-off at each grid point
    and return the weight maximizing their harmonic mean plus the full
    curve. Points where either modularity is non-positive are infeasible."""
    if not grid:
        raise ArgumentError("weight grid must be nonempty")
    if any(w <= 0 for w in grid):
        raise ArgumentError("weights must be positive")
    curve: list[WeightScore] = []
    for w in grid:
        q_vis, q_lang = evaluator(w)
        curve.append(WeightScore(weight=w, q_vis=q_vis, q_lang=q_lang,
                                 score=harmonic_mean(q_vis, q_lang)))
    best = max(curve, key=lambda p: p.score)
    if best.score == float("-inf"):
        raise NoFeasibleWeightError(
            "every grid point has non-positive vision or language modularity"
        )
    # max() keeps the first of equal scores, so ties resolve to the lowest weight
    return best.weight, curve


def default_weight_grid(points: int = 21, low: float = 1.0 / 16.0, high: float = 16.0) -> list[float]:
    """Geometric grid; the weight is a scale ratio between blocks."""
    return [float(w) for w in np.geomspace(low, high, points)]


class LayerEmbedder:
    """Embeds an image-text pair with a single VLM layer."""

    def __init__(self, provider: Provider, layer: LayerSpec):
        self.provider = provider
        self.layer = layer

    def embed(self, image_ref: str, text: str, bbox: BBox | None = None) -> np.ndarray:
        return self.provider.embed_pair(image_ref, bbox, text, self.layer).values


class DualEmbedder:
    """Embeds an image-text pair in the fitted dual space."""

    def __init__(self, provider: Provider, config: DualConfig):
        self.provider = provider
        self.config = config

    def embed(self, image_ref: str, text: str, bbox: BBox | None = None) -> np.ndarray:
        z_vis = self.provider.embed_pair(image_ref, bbox, text, self.config.layer)
        z_text = self.provider.embed_text(text)
        return assemble(z_vis, z_text, self.config.text_weight).values


def fit_dual_config(
    provider: Provider,
    pool: Sequence[PairNode],
    spec: BatchSpec,
    weight_grid: Sequence[float] | None = None,
    pooling: str = "mean",
) -> tuple[DualConfig, list[tuple[LayerSpec, float]], list[WeightScore]]:
    """Two-stage fit: sweep every vision layer by bimodal sample modularity,
    then sweep the text weight on the resulting dual space by harmonic-mean
    maximization. Returns the config plus both sweep curves for reporting."""
    manifest = provider.manifest()
    layer_count = manifest.blocks.get("vision", 0)
    if layer_count == 0:
        raise ArgumentError("provider manifest advertises no vision layers")
    sweep: list[tuple[LayerSpec, float]] = []
    for index in range(layer_count):
        layer = LayerSpec(block="vision", index=index, pooling=pooling)
        estimate = sample_modularity(pool, "bimodal", spec, LayerEmbedder(provider, layer))
        sweep.append((layer, estimate.mean))
    best_layer = select_layer(sweep)
    vision_dim = manifest.check_layer(best_layer)
    text_dim = manifest.sentence_dim

    grid = list(weight_grid) if weight_grid else default_weight_grid()

    def evaluator(weight: float) -> tuple[float, float]:
        config = DualConfig(
            layer=best_layer,
            text_weight=weight,
            vision_dim=vision_dim,
            text_dim=text_dim,
            manifest_hash=manifest.hash(),
        )
        embedder = DualEmbedder(provider, config)
        q_vis = sample_modularity(pool, "vision", spec, embedder).mean
        q_lang = sample_modularity(pool, "language", spec, embedder).mean
        return q_vis, q_lang

    best_weight, curve = select_weight(grid, evaluator)
    config = DualConfig(
        layer=best_layer,
        text_weight=best_weight,
        vision_dim=vision_dim,
        text_dim=text_dim,
        manifest_hash=manifest.hash(),
    )
    return config, sweep, curve
