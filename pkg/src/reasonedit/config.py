"""Engine configuration: one structured JSON file carrying every coupled
knob, with command-line flags overriding individual fields and the
REASONEDIT_PROVIDER_URL environment variable overriding the endpoint.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .dual import default_weight_grid
from .errors import ArgumentError, InputFormatError
from .patchify import PatchifyConfig
from .provider import (
    CachingProvider,
    FileProvider,
    MockLayerProfile,
    MockProvider,
    Provider,
    RemoteProvider,
)
from .retrieval import RetrievalConfig
from .topology import BatchSpec, BiasConfig

PROVIDER_URL_ENV = "REASONEDIT_PROVIDER_URL"

PROVIDER_MODES = ("mock", "remote", "file")


@dataclass
class ProviderConfig:
    mode: str = "mock"
    endpoint: str | None = None
    seed: int = 0
    paths: list[str] = field(default_factory=list)
    cache_dir: str | None = None
    mock: dict = field(default_factory=dict)  # MockProvider keyword overrides

    def resolve_endpoint(self) -> str | None:
        return os.environ.get(PROVIDER_URL_ENV) or self.endpoint


@dataclass
class EngineConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    batch: BatchSpec = field(default_factory=BatchSpec)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    bias: BiasConfig = field(default_factory=BiasConfig)
    merge_enabled: bool = True
    prompt_template: str | None = None  # override for the retrieval prompt join
    weight_grid: list[float] = field(default_factory=default_weight_grid)
    scales: tuple[int, ...] = (1, 2, 3)
    pair_pool: str | None = None
    mismatch_text_pool: str | None = None
    mismatch_image_pool: str | None = None
    dual_config_path: str | None = None
    codebook_path: str | None = None

    def patch_config(self) -> PatchifyConfig:
        return PatchifyConfig(scales=tuple(self.scales))


def _mock_from_config(obj: dict) -> MockProvider:
    kwargs = dict(obj)
    profile = kwargs.pop("profile", None)
    if profile is not None:
        kwargs["profile"] = MockLayerProfile(**profile)
    layer_profiles = kwargs.pop("layer_profiles", None)
    if layer_profiles is not None:
        parsed = {}
        for key, value in layer_profiles.items():
            block, index = key.rsplit(":", 1)
            parsed[(block, int(index))] = MockLayerProfile(**value)
        kwargs["layer_profiles"] = parsed
    return MockProvider(**kwargs)


def build_provider(cfg: ProviderConfig) -> Provider:
    if cfg.mode == "mock":
        mock_kwargs = dict(cfg.mock)
        mock_kwargs.setdefault("seed", cfg.seed)
        provider: Provider = _mock_from_config(mock_kwargs)
    elif cfg.mode == "remote":
        endpoint = cfg.resolve_endpoint()
        if not endpoint:
            raise ArgumentError(
                f"remote provider needs an endpoint (config or {PROVIDER_URL_ENV})"
            )
        provider = RemoteProvider(endpoint)
    elif cfg.mode == "file":
        if not cfg.paths:
            raise ArgumentError("file provider needs at least one dump path")
        provider = FileProvider(cfg.paths)
    else:
        raise ArgumentError(f"unknown provider mode {cfg.mode!r}")
    if cfg.cache_dir:
        provider = CachingProvider(provider, cfg.cache_dir)
    return provider


def load_engine_config(path: str | Path | None) -> EngineConfig:
    if path is None:
        return EngineConfig()
    try:
        obj = json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise InputFormatError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"config file {path}: {exc.msg}")
    return engine_config_from_json(obj)


def engine_config_from_json(obj: dict) -> EngineConfig:
    cfg = EngineConfig()
    provider = obj.get("provider", {})
    cfg.provider = ProviderConfig(
        mode=provider.get("mode", "mock"),
        endpoint=provider.get("endpoint"),
        seed=int(provider.get("seed", 0)),
        paths=list(provider.get("paths") or ()),
        cache_dir=provider.get("cache_dir"),
        mock=dict(provider.get("mock") or {}),
    )
    if cfg.provider.mode not in PROVIDER_MODES:
        raise ArgumentError(f"unknown provider mode {cfg.provider.mode!r}")
    batch = obj.get("batch", {})
    cfg.batch = BatchSpec(
        n=int(batch.get("n", 10)),
        batches=int(batch.get("B", batch.get("batches", 10))),
        seed=int(batch.get("seed", 0)),
        aug_per_anchor=batch.get("aug_per_anchor"),
    )
    retrieval = obj.get("retrieval", {})
    cfg.retrieval = RetrievalConfig(
        k=int(retrieval.get("K", retrieval.get("k", 5))),
        percentile=float(retrieval.get("p", retrieval.get("percentile", 50))),
    )
    bias = obj.get("bias", {})
    cfg.bias = BiasConfig(
        aug_variants=int(bias.get("aug_variants", 4)),
        mismatch_count=int(bias.get("mismatch_count", 8)),
    )
    cfg.merge_enabled = bool(obj.get("merge_enabled", True))
    cfg.prompt_template = obj.get("prompt_template")
    if obj.get("weight_grid"):
        cfg.weight_grid = [float(w) for w in obj["weight_grid"]]
    if obj.get("scales"):
        cfg.scales = tuple(int(s) for s in obj["scales"])
    pools = obj.get("pools", {})
    cfg.pair_pool = pools.get("pairs")
    cfg.mismatch_text_pool = pools.get("mismatch_texts")
    cfg.mismatch_image_pool = pools.get("mismatch_images")
    paths = obj.get("paths", {})
    cfg.dual_config_path = paths.get("dual_config")
    cfg.codebook_path = paths.get("codebook")
    return cfg
