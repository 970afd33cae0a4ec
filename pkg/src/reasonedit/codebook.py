"""The lifelong key-value codebook: answer and reasoning entries, local
radius estimation, key merging, and binary snapshots.

Each edit contributes one answer entry (key = dual embedding of the query
pair, value = templated answer sentence) and one reasoning entry per
(statement, evidence box) pair. New entries merge into an existing entry
when their radius neighborhoods overlap heavily; otherwise they append.

Concurrency: single writer, multiple readers. add_edit requires exclusive
access; retrieval reads a published entry list and never mutates it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binio import CODEBOOK_MAGIC, Reader, Writer
from .dual import DualConfig, DualEmbedder
from .edits import BBox, Edit, answer_sentence
from .errors import (
    ArgumentError,
    CompatibilityError,
    ProviderError,
    ProviderTransportError,
    SnapshotFormatError,
)
from .patchify import PatchifyConfig, find_evidence

ANSWER_KIND = "answer"
REASONING_KIND = "reasoning"

# Merge thresholds: both chord-overlap fractions must exceed this and the
# key distance must be below this fraction of both radii.
OVERLAP_THRESHOLD = 0.9
DISTANCE_FRACTION = 0.1

DEFAULT_RADIUS_VARIANTS = 4


@dataclass(frozen=True)
class Provenance:
    edit_id: str
    kind: str  # answer | reasoning
    statement_index: int = -1  # -1 for answer entries
    bbox: BBox | None = None


@dataclass
class CodebookEntry:
    key: np.ndarray  # float32, dual space
    radius: float
    values: list[str]
    provenance: list[Provenance]
    merge_count: int = 1

    def __post_init__(self) -> None:
        self.key = np.asarray(self.key, dtype=np.float32)
        if self.radius < 0:
            raise ArgumentError("radius must be non-negative")
        if not self.values:
            raise ArgumentError("entry must carry at least one value sentence")


class Codebook:
    def __init__(self, config: DualConfig):
        self.config = config
        self.entries: list[CodebookEntry] = []
        self.edit_count = 0
        self.merges = 0
        self._keys_cache: np.ndarray | None = None
        self._threshold_cache: dict[float, float] = {}

    def _invalidate(self) -> None:
        self._keys_cache = None
        self._threshold_cache.clear()

    def keys_matrix(self) -> np.ndarray:
        if self._keys_cache is None or self._keys_cache.shape[0] != len(self.entries):
            if self.entries:
                self._keys_cache = np.stack([e.key for e in self.entries]).astype(np.float64)
            else:
                self._keys_cache = np.zeros((0, self.config.dim), dtype=np.float64)
        return self._keys_cache

    def stats(self) -> dict:
        return {
            "entries": len(self.entries),
            "edit_count": self.edit_count,
            "merges": self.merges,
            "bytes_stored": len(snapshot(self)),
        }


def overlap_fraction(distance: float, radius: float, other_radius: float) -> float:
    """Chord-model overlap: each key occupies the interval of length 2r
    centered on its projection along the center line; the fraction is the
    shared length over this key's interval length."""
    if radius <= 0:
        return 1.0 if distance == 0.0 else 0.0
    left = max(-radius, distance - other_radius)
    right = min(radius, distance + other_radius)
    return max(0.0, right - left) / (2.0 * radius)


def try_merge(existing: CodebookEntry, candidate: CodebookEntry) -> CodebookEntry | None:
    """Merge the candidate into the existing entry when their neighborhoods
    overlap: key distance under 10% of both radii and chord overlap above
    90% for both. Returns the merged entry or None.

    The merged key is the elementwise mean, the radius the max of the two
    (covering both ancestors), values the first-occurrence-ordered union.
    Coincident keys always merge regardless of radii.
    """
    if existing.key.size != candidate.key.size:
        raise ArgumentError("key dimensions differ")
    distance = float(np.linalg.norm(
        existing.key.astype(np.float64) - candidate.key.astype(np.float64)
    ))
    if distance > 0.0:
        if distance >= DISTANCE_FRACTION * existing.radius:
            return None
        if distance >= DISTANCE_FRACTION * candidate.radius:
            return None
        if overlap_fraction(distance, existing.radius, candidate.radius) <= OVERLAP_THRESHOLD:
            return None
        if overlap_fraction(distance, candidate.radius, existing.radius) <= OVERLAP_THRESHOLD:
            return None

    merged_key = (
        (existing.key.astype(np.float64) + candidate.key.astype(np.float64)) / 2.0
    ).astype(np.float32)
    values = list(existing.values)
    for sentence in candidate.values:
        if sentence not in values:
            values.append(sentence)
    provenance = list(existing.provenance)
    for record in candidate.provenance:
        if record not in provenance:
            provenance.append(record)
    return CodebookEntry(
        key=merged_key,
        radius=max(existing.radius, candidate.radius),
        values=values,
        provenance=provenance,
        merge_count=existing.merge_count + candidate.merge_count,
    )


def estimate_radius(
    anchor_key: np.ndarray,
    image_ref: str,
    text: str,
    embedder: DualEmbedder,
    bbox: BBox | None = None,
    variants: int = DEFAULT_RADIUS_VARIANTS,
) -> float:
    """Local neighborhood radius of a key: the mean dual-space distance from
    the anchor to augmented variants of its source pair."""
    anchor = np.asarray(anchor_key, dtype=np.float64)
    augmented = embedder.provider.augment(image_ref, text, variants)
    distances = [
        float(np.linalg.norm(anchor - np.asarray(embedder.embed(ref, txt, bbox=bbox),
                                                 dtype=np.float64)))
        for ref, txt in augmented
    ]
    return float(np.mean(distances))


def _default_radius(cb: Codebook) -> float:
    # fallback when augmentation is unavailable: median of existing radii
    if not cb.entries:
        return 0.0
    return float(np.median([e.radius for e in cb.entries]))


def _merge_or_insert(cb: Codebook, candidate: CodebookEntry, merge_enabled: bool) -> None:
    if merge_enabled:
        for position, existing in enumerate(cb.entries):
            merged = try_merge(existing, candidate)
            if merged is not None:
                cb.entries[position] = merged
                cb.merges += 1
                return
    cb.entries.append(candidate)


def add_edit(
    cb: Codebook,
    edit: Edit,
    embedder: DualEmbedder,
    *,
    merge_enabled: bool = True,
    patch_config: PatchifyConfig = PatchifyConfig(),
) -> Codebook:
    """Apply one edit: build the answer entry, then one reasoning entry per
    (statement, evidence box), merging each against the codebook in order.

    Evidence boxes come from the edit when the user supplied them and from
    automatic patchification otherwise. All provider calls happen before
    any mutation, so a transport failure leaves the codebook unchanged.
    Radius estimation alone degrades gracefully: if augmentation is
    unavailable the entry gets the median radius of existing entries.
    """
    edit.validate()
    if cb.config.config_hash() != embedder.config.config_hash():
        raise CompatibilityError("embedder config does not match the codebook config")

    def build_entry(
        key: np.ndarray, values: list[str], prov: Provenance,
        source_ref: str, source_text: str, source_bbox: BBox | None,
    ) -> CodebookEntry:
        try:
            radius = estimate_radius(key, source_ref, source_text, embedder, bbox=source_bbox)
        except ProviderTransportError:
            raise
        except ProviderError:
            radius = _default_radius(cb)
        return CodebookEntry(key=key, radius=radius, values=values,
                             provenance=[prov], merge_count=1)

    staged: list[CodebookEntry] = []

    answer_key = embedder.embed(edit.image_ref, edit.question)
    staged.append(build_entry(
        answer_key,
        [answer_sentence(edit.question, edit.answer)],
        Provenance(edit_id=edit.edit_id, kind=ANSWER_KIND),
        edit.image_ref, edit.question, None,
    ))

    for index, statement in enumerate(edit.reasoning):
        boxes = edit.evidence_for(index)
        if not boxes:
            boxes = list(find_evidence(edit.image_ref, statement,
                                       embedder.provider, patch_config).boxes)
        for box in boxes:
            key = embedder.embed(edit.image_ref, statement, bbox=box)
            staged.append(build_entry(
                key,
                [statement],
                Provenance(edit_id=edit.edit_id, kind=REASONING_KIND,
                           statement_index=index, bbox=box),
                edit.image_ref, statement, box,
            ))

    for entry in staged:
        _merge_or_insert(cb, entry, merge_enabled)
    cb.edit_count += 1
    cb._invalidate()
    return cb


SNAPSHOT_VERSION = 1


def snapshot(cb: Codebook) -> bytes:
    """Serialize the codebook; load() restores it field-identically,
    including key vector bits (keys are stored as little-endian float32)."""
    writer = Writer()
    writer.raw(CODEBOOK_MAGIC)
    writer.u32(SNAPSHOT_VERSION)
    writer.text(cb.config.config_hash())
    writer.u64(cb.edit_count)
    writer.u64(cb.merges)
    writer.u64(len(cb.entries))
    for entry in cb.entries:
        writer.f32_array(entry.key)
        writer.f64(entry.radius)
        writer.u32(len(entry.values))
        for sentence in entry.values:
            writer.text(sentence)
        writer.u32(len(entry.provenance))
        for record in entry.provenance:
            writer.text(record.edit_id)
            writer.u8(0 if record.kind == ANSWER_KIND else 1)
            writer.i32(record.statement_index)
            if record.bbox is None:
                writer.u8(0)
            else:
                writer.u8(1)
                writer.u32(record.bbox.x)
                writer.u32(record.bbox.y)
                writer.u32(record.bbox.w)
                writer.u32(record.bbox.h)
        writer.u32(entry.merge_count)
    return writer.getvalue()


def load(data: bytes, config: DualConfig) -> Codebook:
    reader = Reader(data)
    if reader.raw(4) != CODEBOOK_MAGIC:
        raise SnapshotFormatError("not a codebook snapshot (bad magic)")
    version = reader.u32()
    if version != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    stored_hash = reader.text()
    if stored_hash != config.config_hash():
        raise CompatibilityError(
            "snapshot was built under a different dual-embedding config"
        )
    cb = Codebook(config)
    cb.edit_count = reader.u64()
    cb.merges = reader.u64()
    entry_count = reader.u64()
    for _ in range(entry_count):
        key = reader.f32_array()
        radius = reader.f64()
        values = [reader.text() for _ in range(reader.u32())]
        provenance: list[Provenance] = []
        for _ in range(reader.u32()):
            edit_id = reader.text()
            kind = ANSWER_KIND if reader.u8() == 0 else REASONING_KIND
            statement_index = reader.i32()
            bbox = None
            if reader.u8() == 1:
                bbox = BBox(x=reader.u32(), y=reader.u32(), w=reader.u32(), h=reader.u32())
            provenance.append(Provenance(edit_id=edit_id, kind=kind,
                                         statement_index=statement_index, bbox=bbox))
        merge_count = reader.u32()
        cb.entries.append(CodebookEntry(key=key, radius=radius, values=values,
                                        provenance=provenance, merge_count=merge_count))
    reader.expect_end()
    return cb


def storage_per_edit(cb: Codebook) -> float:
    """Serialized snapshot size in KB divided by the number of edits."""
    if cb.edit_count == 0:
        raise ArgumentError("codebook holds no edits")
    return len(snapshot(cb)) / 1024.0 / cb.edit_count
