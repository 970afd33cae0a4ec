"""Retrieval-based model editing engine: a lifelong key-value codebook over
topology-balanced multimodal embeddings, with the network diagnostics that
select those embeddings and a six-metric evaluation harness."""

from .edits import BBox, Edit, EvalSample, answer_sentence, parse_edits
from .provider import (
    EmbeddingVector,
    FileProvider,
    LayerSpec,
    Manifest,
    MockProvider,
    Provider,
    RemoteProvider,
    YesNoScore,
)

__all__ = [
    "BBox",
    "Edit",
    "EvalSample",
    "answer_sentence",
    "parse_edits",
    "EmbeddingVector",
    "FileProvider",
    "LayerSpec",
    "Manifest",
    "MockProvider",
    "Provider",
    "RemoteProvider",
    "YesNoScore",
]

__version__ = "0.1.0"
