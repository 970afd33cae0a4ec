"""Edit records, evaluation samples, and their line-delimited file formats.

One JSON record per line; field names are part of the file contract and
must not be renamed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import ArgumentError, InputFormatError, ValidationError

ANSWER_TEMPLATE = "The answer to question {question} about the image is {answer}."

EVAL_KINDS = ("edit", "t_gen", "i_gen", "r_gen", "coe_gen", "unrelated")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box. Validation is explicit so that invalid boxes
    can be constructed in order to test rejection paths."""

    x: int
    y: int
    w: int
    h: int

    def validate(self, image_width: int | None = None, image_height: int | None = None) -> None:
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValidationError(f"bbox field {name} must be an integer, got {value!r}")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"bbox origin must be non-negative, got ({self.x}, {self.y})")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"bbox must have positive extent, got {self.w}x{self.h}")
        if image_width is not None and self.x + self.w > image_width:
            raise ValidationError(f"bbox exceeds image width {image_width}")
        if image_height is not None and self.y + self.h > image_height:
            raise ValidationError(f"bbox exceeds image height {image_height}")

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_json(cls, obj: dict) -> "BBox":
        try:
            return cls(x=obj["x"], y=obj["y"], w=obj["w"], h=obj["h"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad bbox record: {obj!r}") from exc


@dataclass(frozen=True)
class Evidence:
    statement_index: int
    bbox: BBox


@dataclass(frozen=True)
class Edit:
    """One user correction: the query pair, the corrected answer, and the
    ordered reasoning statements with optional per-statement evidence boxes."""

    edit_id: str
    image_ref: str
    question: str
    answer: str
    reasoning: tuple[str, ...] = ()
    evidence: tuple[Evidence, ...] = ()

    def validate(self) -> None:
        if not self.edit_id:
            raise ValidationError("edit_id must be nonempty")
        if not self.question or not self.answer:
            raise ValidationError(f"edit {self.edit_id!r}: question and answer must be nonempty")
        if not self.image_ref:
            raise ValidationError(f"edit {self.edit_id!r}: image_ref must be nonempty")
        for ev in self.evidence:
            if not 0 <= ev.statement_index < len(self.reasoning):
                raise ValidationError(
                    f"edit {self.edit_id!r}: evidence statement_index {ev.statement_index} "
                    f"out of range for {len(self.reasoning)} reasoning statements"
                )
            ev.bbox.validate()

    def evidence_for(self, statement_index: int) -> list[BBox]:
        return [ev.bbox for ev in self.evidence if ev.statement_index == statement_index]

    def to_json(self) -> dict:
        record: dict = {
            "edit_id": self.edit_id,
            "image_ref": self.image_ref,
            "question": self.question,
            "answer": self.answer,
            "reasoning": list(self.reasoning),
        }
        if self.evidence:
            record["evidence"] = [
                {"statement_index": ev.statement_index, "bbox": ev.bbox.to_json()}
                for ev in self.evidence
            ]
        return record

    @classmethod
    def from_json(cls, obj: dict) -> "Edit":
        evidence = tuple(
            Evidence(statement_index=item["statement_index"], bbox=BBox.from_json(item["bbox"]))
            for item in obj.get("evidence") or ()
        )
        edit = cls(
            edit_id=obj.get("edit_id", ""),
            image_ref=obj.get("image_ref", ""),
            question=obj.get("question", ""),
            answer=obj.get("answer", ""),
            reasoning=tuple(obj.get("reasoning") or ()),
            evidence=evidence,
        )
        edit.validate()
        return edit


def answer_sentence(question: str, answer: str) -> str:
    """Render the fixed answer-entry value sentence for a corrected pair."""
    if not question or not answer:
        raise ArgumentError("question and answer must both be nonempty")
    return ANSWER_TEMPLATE.format(question=question, answer=answer)


def _iter_records(lines: Iterable[str]) -> Iterator[tuple[int, dict]]:
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"invalid record: {exc.msg}", line=lineno) from exc
        if not isinstance(obj, dict):
            raise InputFormatError("record must be a JSON object", line=lineno)
        yield lineno, obj


def parse_edits(lines: Iterable[str]) -> list[Edit]:
    """Parse a line-delimited edits stream, preserving file order.

    Raises InputFormatError with the offending line number for malformed
    lines and ValidationError for invariant violations (duplicate ids,
    out-of-range evidence indexes, empty required fields).
    """
    edits: list[Edit] = []
    seen: set[str] = set()
    for lineno, obj in _iter_records(lines):
        try:
            edit = Edit.from_json(obj)
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
        if edit.edit_id in seen:
            raise ValidationError(f"line {lineno}: duplicate edit_id {edit.edit_id!r}")
        seen.add(edit.edit_id)
        edits.append(edit)
    return edits


def serialize_edits(edits: Iterable[Edit]) -> str:
    return "".join(json.dumps(e.to_json(), ensure_ascii=False) + "\n" for e in edits)


@dataclass(frozen=True)
class EvalSample:
    """One evaluation-set record; `kind` selects which metric scores it."""

    sample_id: str
    kind: str
    image_ref: str
    question: str
    reference_answer: str
    parent_edit_id: str | None = None
    candidates: tuple[str, ...] = ()

    def validate(self) -> None:
        if not self.sample_id:
            raise ValidationError("sample_id must be nonempty")
        if self.kind not in EVAL_KINDS:
            raise ValidationError(f"sample {self.sample_id!r}: unknown kind {self.kind!r}")
        if self.candidates and self.reference_answer not in self.candidates:
            raise ValidationError(
                f"sample {self.sample_id!r}: reference_answer not among candidates"
            )

    def to_json(self) -> dict:
        record: dict = {
            "sample_id": self.sample_id,
            "kind": self.kind,
            "image_ref": self.image_ref,
            "question": self.question,
            "reference_answer": self.reference_answer,
        }
        if self.parent_edit_id is not None:
            record["parent_edit_id"] = self.parent_edit_id
        if self.candidates:
            record["candidates"] = list(self.candidates)
        return record

    @classmethod
    def from_json(cls, obj: dict) -> "EvalSample":
        sample = cls(
            sample_id=obj.get("sample_id", ""),
            kind=obj.get("kind", ""),
            image_ref=obj.get("image_ref", ""),
            question=obj.get("question", ""),
            reference_answer=obj.get("reference_answer", ""),
            parent_edit_id=obj.get("parent_edit_id"),
            candidates=tuple(obj.get("candidates") or ()),
        )
        sample.validate()
        return sample


def parse_eval_samples(lines: Iterable[str]) -> list[EvalSample]:
    samples: list[EvalSample] = []
    seen: set[str] = set()
    for lineno, obj in _iter_records(lines):
        try:
            sample = EvalSample.from_json(obj)
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
        if sample.sample_id in seen:
            raise ValidationError(f"line {lineno}: duplicate sample_id {sample.sample_id!r}")
        seen.add(sample.sample_id)
        samples.append(sample)
    return samples


def serialize_eval_samples(samples: Iterable[EvalSample]) -> str:
    return "".join(json.dumps(s.to_json(), ensure_ascii=False) + "\n" for s in samples)
