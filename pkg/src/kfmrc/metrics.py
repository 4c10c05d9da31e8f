"""Character-level EM/F1 and the span error taxonomy."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

__all__ = [
    "ERROR_TYPES",
    "normalize",
    "em_score",
    "f1_score",
    "classify_error",
    "MetricReport",
]

ERROR_TYPES = ("exact", "start_cross", "end_cross", "substring", "other")


def normalize(text: str) -> str:
    """Trim, then drop any remaining whitespace."""
    return "".join(text.strip().split())


def _refs(references: str | Sequence[str]) -> list[str]:
    refs = [references] if isinstance(references, str) else list(references)
    if not refs:
        raise ValueError("at least one reference is required")
    return refs


def em_score(prediction: str, references: str | Sequence[str]) -> int:
    pred = normalize(prediction)
    return int(any(pred == normalize(r) for r in _refs(references)))


def _f1_single(pred: str, ref: str) -> float:
    if not pred or not ref:
        return float(pred == ref)
    common = sum((Counter(pred) & Counter(ref)).values())
    # harmonic mean of common/len(pred) and common/len(ref), rounded once
    return 2 * common / (len(pred) + len(ref))


def f1_score(prediction: str, references: str | Sequence[str]) -> float:
    pred = normalize(prediction)
    return max(_f1_single(pred, normalize(r)) for r in _refs(references))


def classify_error(pred: tuple[int, int], gold: tuple[int, int]) -> str:
    """Geometry of an inclusive predicted span against the gold span."""
    a, b = pred
    c, d = gold
    if (a, b) == (c, d):
        return "exact"
    if c <= a and b <= d:
        return "substring"
    if a < c <= b <= d:
        return "start_cross"
    if c <= a <= d < b:
        return "end_cross"
    return "other"


@dataclass
class MetricReport:
    answer_em: float = 0.0
    answer_f1: float = 0.0
    support_em: float = 0.0
    support_f1: float = 0.0
    errors: dict[str, int] = field(default_factory=lambda: dict.fromkeys(ERROR_TYPES, 0))
    support_errors: dict[str, int] = field(default_factory=lambda: dict.fromkeys(ERROR_TYPES, 0))
    per_example: list[dict] = field(default_factory=list)

    @classmethod
    def from_rows(cls, rows: Iterable[dict]) -> "MetricReport":
        """Aggregate rows carrying ``answer_em``, ``answer_f1``, ``support_em``,
        ``support_f1``, ``error`` and ``support_error``."""
        rows = list(rows)
        rep = cls(per_example=rows)
        if not rows:
            return rep
        n = len(rows)
        rep.answer_em = sum(r["answer_em"] for r in rows) / n
        rep.answer_f1 = sum(r["answer_f1"] for r in rows) / n
        rep.support_em = sum(r["support_em"] for r in rows) / n
        rep.support_f1 = sum(r["support_f1"] for r in rows) / n
        for r in rows:
            rep.errors[r["error"]] += 1
            rep.support_errors[r["support_error"]] += 1
        return rep

    def to_dict(self) -> dict:
        return {
            "answer": {"em": self.answer_em, "f1": self.answer_f1},
            "support": {"em": self.support_em, "f1": self.support_f1},
            "errors": dict(self.errors),
            "support_errors": dict(self.support_errors),
            "per_example": self.per_example,
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)

    def write_csv(self, path) -> None:
        cols = ["id", "answer_em", "answer_f1", "support_em", "support_f1", "error", "support_error"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            w.writerows(self.per_example)
