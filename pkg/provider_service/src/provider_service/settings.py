"""Service configuration: one JSON file plus a port flag on the runner."""
from __future__ import annotations

import json
from pathlib import Path

from pydantic import BaseModel

from reasonedit.provider import MockLayerProfile, MockProvider


class MockSettings(BaseModel):
    vision_layers: int = 4
    merger_layers: int = 2
    language_layers: int = 4
    layer_dim: int = 32
    sentence_dim: int = 16
    yesno_default_p: float | None = None
    profile: dict | None = None
    layer_profiles: dict[str, dict] | None = None
    scale_overrides: dict[str, float] | None = None


class Settings(BaseModel):
    mode: str = "mock"  # "mock" | "real" (real requires a wired model backend)
    model: str = "mock-vlm"
    seed: int = 0
    known_images: list[str] | None = None  # when set, anything else is a 404
    corpus_dir: str | None = None
    mock: MockSettings = MockSettings()

    @classmethod
    def load(cls, path: str | Path) -> "Settings":
        return cls.model_validate(json.loads(Path(path).read_text("utf-8")))

    def build_mock(self) -> MockProvider:
        kwargs: dict = dict(
            seed=self.seed,
            model=self.model,
            vision_layers=self.mock.vision_layers,
            merger_layers=self.mock.merger_layers,
            language_layers=self.mock.language_layers,
            layer_dim=self.mock.layer_dim,
            sentence_dim=self.mock.sentence_dim,
            yesno_default_p=self.mock.yesno_default_p,
        )
        if self.mock.profile:
            kwargs["profile"] = MockLayerProfile(**self.mock.profile)
        if self.mock.layer_profiles:
            parsed = {}
            for key, value in self.mock.layer_profiles.items():
                block, index = key.rsplit(":", 1)
                parsed[(block, int(index))] = MockLayerProfile(**value)
            kwargs["layer_profiles"] = parsed
        if self.mock.scale_overrides:
            kwargs["scale_overrides"] = dict(self.mock.scale_overrides)
        return MockProvider(**kwargs)
