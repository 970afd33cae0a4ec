"""Visual evidence patchification: multi-scale grid candidates, yes/no
verification, likelihood scoring, and evidence selection.

User-provided evidence boxes bypass this module entirely; it only runs for
reasoning statements that arrive without manual evidence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .edits import BBox
from .errors import ArgumentError
from .provider import Provider, YesNoScore

VERIFY_PROMPT = "Does the image show {statement}?"
DESCRIBE_PROMPT = "Describe this image."


@dataclass
class PatchCandidate:
    bbox: BBox
    scale: int  # grid level; 1 is the full image
    verify_p_yes: float | None = None
    loglik: float | None = None


@dataclass(frozen=True)
class PatchifyConfig:
    scales: tuple[int, ...] = (1, 2, 3)
    # assumed when the caller cannot supply real image dimensions
    default_image_size: tuple[int, int] = (448, 448)


def grid_candidates(width: int, height: int, scales: tuple[int, ...] | list[int]) -> list[PatchCandidate]:
    """Partition the image into an s x s grid of equal cells per scale s,
    with remainder pixels absorbed by the last row and column. Scale 1 is
    the full image; the total candidate count is the sum of s^2."""
    if width < 1 or height < 1:
        raise ArgumentError("image dimensions must be positive")
    if not scales:
        raise ArgumentError("scales must be nonempty")
    candidates: list[PatchCandidate] = []
    for scale in scales:
        if scale < 1:
            raise ArgumentError("scales must be at least 1")
        cell_w = width // scale
        cell_h = height // scale
        if cell_w < 1 or cell_h < 1:
            raise ArgumentError(f"scale {scale} exceeds image size {width}x{height}")
        for row in range(scale):
            for col in range(scale):
                x = col * cell_w
                y = row * cell_h
                w = width - x if col == scale - 1 else cell_w
                h = height - y if row == scale - 1 else cell_h
                candidates.append(PatchCandidate(bbox=BBox(x=x, y=y, w=w, h=h), scale=scale))
    return candidates


def yesno_prob(score: YesNoScore) -> float:
    """P(yes) from the two NLLs via a softmax over the two candidates.

    An infinite NLL maps that side to probability zero; both infinite is a
    degenerate score and rejected upstream (checked again here)."""
    if math.isinf(score.nll_yes) and math.isinf(score.nll_no):
        raise ArgumentError("degenerate score: both NLLs infinite")
    if math.isinf(score.nll_yes):
        return 0.0
    if math.isinf(score.nll_no):
        return 1.0
    # exp(-yes) / (exp(-yes) + exp(-no)) rewritten for stability
    return 1.0 / (1.0 + math.exp(score.nll_yes - score.nll_no))


@dataclass(frozen=True)
class EvidenceResult:
    boxes: tuple[BBox, ...]
    low_confidence: bool = False


def find_evidence(
    image_ref: str,
    statement: str,
    provider: Provider,
    config: PatchifyConfig = PatchifyConfig(),
    width: int | None = None,
    height: int | None = None,
) -> EvidenceResult:
    """Select at most two evidence boxes for a reasoning statement.

    Generates grid candidates, keeps those the provider verifies with
    P(yes) > 0.5 under the show-statement prompt, scores survivors by the
    statement log-likelihood under the describe prompt, and returns the
    best box overall together with the best box at the finest surviving
    scale (deduplicated). If nothing verifies, falls back to the full
    image, flagged low-confidence.
    """
    if not statement:
        raise ArgumentError("statement must be nonempty")
    w = width if width is not None else config.default_image_size[0]
    h = height if height is not None else config.default_image_size[1]
    candidates = grid_candidates(w, h, config.scales)

    kept: list[PatchCandidate] = []
    for candidate in candidates:
        score = provider.yesno(image_ref, candidate.bbox, statement, VERIFY_PROMPT)
        candidate.verify_p_yes = yesno_prob(score)
        if candidate.verify_p_yes > 0.5:
            candidate.loglik = provider.loglik(image_ref, candidate.bbox, statement)
            kept.append(candidate)

    if not kept:
        full = BBox(x=0, y=0, w=w, h=h)
        return EvidenceResult(boxes=(full,), low_confidence=True)

    best = max(kept, key=lambda c: c.loglik)
    finest_scale = max(c.scale for c in kept)
    finest = max((c for c in kept if c.scale == finest_scale), key=lambda c: c.loglik)
    boxes = [best.bbox]
    if finest.bbox != best.bbox:
        boxes.append(finest.bbox)
    return EvidenceResult(boxes=tuple(boxes), low_confidence=False)
