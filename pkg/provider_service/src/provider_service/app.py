"""Provider wire protocol served over HTTP.

Endpoints and field names are the protocol contract:

    GET  /v1/manifest
    POST /v1/embed       {image_ref|image_inline, bbox?, text, layer}
    POST /v1/embed_text  {text}
    POST /v1/nll_yesno   {image_ref, bbox?, statement, template}
    POST /v1/loglik      {image_ref, bbox, sentence}
    POST /v1/augment     {image_ref, text, count}

Mock mode serves deterministic seeded vectors from the same construction
the engine's in-process mock uses, so both produce bit-identical floats
under a shared seed. Real mode requires a model backend; without one the
model endpoints answer 503.
"""
from __future__ import annotations

import hashlib
import math
from typing import Literal

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from reasonedit.edits import BBox
from reasonedit.errors import ArgumentError, ProviderError
from reasonedit.provider import LayerSpec, MockProvider

from .settings import Settings

# largest NLL served on the wire; keeps response bodies strict-JSON floats
NLL_CLAMP = 700.0


class BBoxModel(BaseModel):
    x: int = Field(ge=0)
    y: int = Field(ge=0)
    w: int = Field(gt=0)
    h: int = Field(gt=0)

    def to_bbox(self) -> BBox:
        return BBox(x=self.x, y=self.y, w=self.w, h=self.h)


class LayerModel(BaseModel):
    block: Literal["vision", "merger", "language", "sentence_encoder"]
    index: int = Field(ge=0, default=0)
    pooling: Literal["mean", "last_token"] = "mean"

    def to_layer(self) -> LayerSpec:
        return LayerSpec(block=self.block, index=self.index, pooling=self.pooling)


class EmbedRequest(BaseModel):
    image_ref: str | None = None
    image_inline: str | None = None  # base64 payload for small tests
    bbox: BBoxModel | None = None
    text: str
    layer: LayerModel


class EmbedTextRequest(BaseModel):
    text: str


class YesNoRequest(BaseModel):
    image_ref: str
    bbox: BBoxModel | None = None
    statement: str
    template: str = "Does the image show {statement}?"


class LoglikRequest(BaseModel):
    image_ref: str
    bbox: BBoxModel
    sentence: str


class AugmentRequest(BaseModel):
    image_ref: str
    text: str
    count: int


class VectorResponse(BaseModel):
    vector: list[float]
    dim: int


class YesNoResponse(BaseModel):
    nll_yes: float
    nll_no: float


class LoglikResponse(BaseModel):
    loglik: float


class VariantResponse(BaseModel):
    image_ref: str
    text: str


def _inline_ref(payload: str) -> str:
    digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()
    return f"inline:{digest}"


def create_app(settings: Settings | None = None) -> FastAPI:
    settings = settings or Settings()
    app = FastAPI(title="reasonedit-provider", version="0.1.0")

    provider: MockProvider | None = None
    if settings.mode == "mock":
        provider = settings.build_mock()

    def require_provider() -> MockProvider:
        if provider is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return provider

    def resolve_image(image_ref: str | None, image_inline: str | None) -> str:
        if image_inline is not None:
            return _inline_ref(image_inline)
        if not image_ref:
            raise HTTPException(status_code=422, detail="image_ref or image_inline required")
        if settings.known_images is not None:
            base = image_ref.split("::aug::")[0]
            if base not in settings.known_images:
                raise HTTPException(status_code=404, detail=f"unknown image {image_ref!r}")
        return image_ref

    def translate(exc: Exception) -> HTTPException:
        if isinstance(exc, ArgumentError):
            return HTTPException(status_code=422, detail=str(exc))
        if isinstance(exc, ProviderError):
            return HTTPException(status_code=503, detail=str(exc))
        raise exc

    @app.get("/v1/manifest")
    def manifest() -> dict:
        return require_provider().manifest().to_json()

    @app.post("/v1/embed", response_model=VectorResponse)
    def embed(request: EmbedRequest) -> VectorResponse:
        backend = require_provider()
        ref = resolve_image(request.image_ref, request.image_inline)
        bbox = request.bbox.to_bbox() if request.bbox else None
        try:
            vector = backend.embed_pair(ref, bbox, request.text, request.layer.to_layer())
        except Exception as exc:  # noqa: BLE001 - translated to wire errors
            raise translate(exc)
        return VectorResponse(vector=[float(x) for x in vector.values], dim=vector.dim)

    @app.post("/v1/embed_text", response_model=VectorResponse)
    def embed_text(request: EmbedTextRequest) -> VectorResponse:
        backend = require_provider()
        try:
            vector = backend.embed_text(request.text)
        except Exception as exc:
            raise translate(exc)
        return VectorResponse(vector=[float(x) for x in vector.values], dim=vector.dim)

    @app.post("/v1/nll_yesno", response_model=YesNoResponse)
    def nll_yesno(request: YesNoRequest) -> YesNoResponse:
        backend = require_provider()
        ref = resolve_image(request.image_ref, None)
        bbox = request.bbox.to_bbox() if request.bbox else None
        try:
            score = backend.yesno(ref, bbox, request.statement, request.template)
        except Exception as exc:
            raise translate(exc)
        return YesNoResponse(
            nll_yes=min(score.nll_yes, NLL_CLAMP) if math.isfinite(score.nll_yes) else NLL_CLAMP,
            nll_no=min(score.nll_no, NLL_CLAMP) if math.isfinite(score.nll_no) else NLL_CLAMP,
        )

    @app.post("/v1/loglik", response_model=LoglikResponse)
    def loglik(request: LoglikRequest) -> LoglikResponse:
        backend = require_provider()
        ref = resolve_image(request.image_ref, None)
        try:
            value = backend.loglik(ref, request.bbox.to_bbox(), request.sentence)
        except Exception as exc:
            raise translate(exc)
        return LoglikResponse(loglik=value)

    @app.post("/v1/augment", response_model=list[VariantResponse])
    def augment(request: AugmentRequest) -> list[VariantResponse]:
        backend = require_provider()
        ref = resolve_image(request.image_ref, None)
        try:
            variants = backend.augment(ref, request.text, request.count)
        except Exception as exc:
            raise translate(exc)
        return [VariantResponse(image_ref=r, text=t) for r, t in variants]

    return app
