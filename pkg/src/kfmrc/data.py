"""Question/passage/answer/support records: parsing and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .decode import segment_sentences
from .encoder import split_tokens

__all__ = [
    "MAX_ANSWER_TOKENS",
    "DatasetError",
    "Candidate",
    "QuadRecord",
    "sentence_char_ranges",
    "parse_record",
    "validate_record",
    "load_dataset",
    "save_dataset",
    "dumps_dataset",
]

MAX_ANSWER_TOKENS = 40


class DatasetError(ValueError):
    def __init__(self, record_id: str, message: str):
        super().__init__(f"record {record_id!r}: {message}")
        self.record_id = record_id


@dataclass
class Candidate:
    char_start: int
    char_end: int
    lexical_class: str = "noun"
    field: str = "passage"


@dataclass
class QuadRecord:
    id: str
    question: str
    passage: str
    answer_text: str
    answer_start: int
    answer_end: int
    support_index: int | None = None
    support_start: int | None = None
    support_end: int | None = None
    additional_answers: list[str] = field(default_factory=list)
    candidates: list[Candidate] | None = None

    @property
    def references(self) -> list[str]:
        return [self.answer_text, *self.additional_answers]

    def support_range(self) -> tuple[int, int]:
        """Char range of the support sentence."""
        if self.support_start is not None and self.support_end is not None:
            return self.support_start, self.support_end
        sents = sentence_char_ranges(self.passage)
        if self.support_index is None or not 0 <= self.support_index < len(sents):
            raise DatasetError(self.id, f"support sentence index {self.support_index} outside [0, {len(sents)})")
        return sents[self.support_index]

    def support_text(self) -> str:
        s, e = self.support_range()
        return self.passage[s:e]

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "question": self.question,
            "passage": self.passage,
            "answer": {"text": self.answer_text, "char_start": self.answer_start, "char_end": self.answer_end},
        }
        if self.support_index is not None:
            out["support"] = {"sentence_index": self.support_index}
        else:
            out["support"] = {"char_start": self.support_start, "char_end": self.support_end}
        out["additional_answers"] = list(self.additional_answers)
        if self.candidates is not None:
            out["candidates"] = [
                {"char_start": c.char_start, "char_end": c.char_end, "class": c.lexical_class, "field": c.field}
                for c in self.candidates
            ]
        return out


def sentence_char_ranges(passage: str) -> list[tuple[int, int]]:
    toks = split_tokens(passage)
    if not toks:
        return []
    return [(toks[s][1], toks[e - 1][2]) for s, e in segment_sentences([t for t, _, _ in toks])]


def parse_record(obj: dict[str, Any]) -> QuadRecord:
    rid = str(obj.get("id", "?"))
    try:
        ans = obj["answer"]
        sup = obj.get("support") or {}
        cands = obj.get("candidates")
        rec = QuadRecord(
            id=rid,
            question=obj["question"],
            passage=obj["passage"],
            answer_text=ans["text"],
            answer_start=int(ans["char_start"]),
            answer_end=int(ans["char_end"]),
            support_index=sup.get("sentence_index"),
            support_start=sup.get("char_start"),
            support_end=sup.get("char_end"),
            additional_answers=list(obj.get("additional_answers", [])),
            candidates=None if cands is None else [
                Candidate(int(c["char_start"]), int(c["char_end"]), c.get("class", "noun"), c.get("field", "passage"))
                for c in cands
            ],
        )
    except (KeyError, TypeError) as exc:
        raise DatasetError(rid, f"missing or malformed field: {exc}") from exc
    if rec.support_index is None and (rec.support_start is None or rec.support_end is None):
        raise DatasetError(rid, "support needs sentence_index or char_start/char_end")
    return rec


def validate_record(rec: QuadRecord, max_answer_tokens: int = MAX_ANSWER_TOKENS) -> None:
    actual = rec.passage[rec.answer_start:rec.answer_end]
    if not (0 <= rec.answer_start < rec.answer_end <= len(rec.passage)) or actual != rec.answer_text:
        raise DatasetError(rec.id, f"answer offsets [{rec.answer_start}, {rec.answer_end}) give {actual!r}, "
                                   f"expected {rec.answer_text!r}")
    s, e = rec.support_range()
    if not (s <= rec.answer_start and rec.answer_end <= e):
        raise DatasetError(rec.id, f"support range [{s}, {e}) does not contain answer "
                                   f"[{rec.answer_start}, {rec.answer_end})")
    n_tok = len(split_tokens(rec.answer_text))
    if n_tok > max_answer_tokens:
        raise DatasetError(rec.id, f"answer has {n_tok} tokens, limit is {max_answer_tokens}")
    if not rec.question.strip() or not split_tokens(rec.passage):
        raise DatasetError(rec.id, "empty question or passage")
    for c in rec.candidates or ():
        text = rec.question if c.field == "question" else rec.passage
        if c.field not in ("question", "passage") or not 0 <= c.char_start < c.char_end <= len(text):
            raise DatasetError(rec.id, f"candidate [{c.char_start}, {c.char_end}) invalid for field {c.field!r}")


def load_dataset(path, validate: bool = True) -> list[QuadRecord]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError(f"{path}: expected a JSON array of records")
    records = [parse_record(obj) for obj in raw]
    if validate:
        for rec in records:
            validate_record(rec)
    return records


def dumps_dataset(records: list[QuadRecord]) -> str:
    return json.dumps([r.to_json() for r in records], ensure_ascii=False, indent=1) + "\n"


def save_dataset(path, records: list[QuadRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_dataset(records))
