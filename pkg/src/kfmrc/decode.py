"""Answer-span and support-sentence decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "TERMINALS",
    "CLOSING_QUOTES",
    "Prediction",
    "decode_answer",
    "segment_sentences",
    "decode_support",
]

TERMINALS = frozenset("。！？；")
CLOSING_QUOTES = frozenset("”’」』\"'")


@dataclass
class Prediction:
    start: int
    end: int
    answer: str
    answer_score: float
    support_index: int
    support_range: tuple[int, int]
    support: str
    support_score: float

    def as_dict(self) -> dict:
        return {
            "answer_span": [self.start, self.end],
            "answer": self.answer,
            "answer_score": self.answer_score,
            "support_index": self.support_index,
            "support_range": list(self.support_range),
            "support": self.support,
            "support_score": self.support_score,
        }


def decode_answer(p_start: np.ndarray, p_end: np.ndarray, passage_range: tuple[int, int] | None = None,
                  max_answer_len: int = 40) -> tuple[int, int, float]:
    """Span ``(i, j)`` maximizing ``p_start[i] * p_end[j]`` with
    ``i <= j < i + max_answer_len`` inside ``passage_range`` (half-open).

    Ties go to the smaller ``i``, then the smaller ``j``.
    """
    p_start = np.asarray(p_start, dtype=np.float64)
    p_end = np.asarray(p_end, dtype=np.float64)
    lo, hi = passage_range if passage_range is not None else (0, len(p_start))
    if hi <= lo:
        raise ValueError("empty passage range")
    s, e = p_start[lo:hi], p_end[lo:hi]
    n = hi - lo
    idx = np.arange(n)
    band = (idx[None, :] >= idx[:, None]) & (idx[None, :] < idx[:, None] + max_answer_len)
    scores = np.where(band, s[:, None] * e[None, :], -np.inf)
    flat = int(np.argmax(scores))
    i, j = divmod(flat, n)
    return lo + i, lo + j, float(scores[i, j])


def segment_sentences(tokens: Sequence[str]) -> list[tuple[int, int]]:
    """Split token positions into sentences ending at 。！？； (plus any
    closing quotes right after). A trailing fragment forms its own sentence."""
    if len(tokens) == 0:
        raise ValueError("cannot segment an empty passage")
    out = []
    start = 0
    i = 0
    n = len(tokens)
    while i < n:
        if tokens[i] in TERMINALS:
            j = i + 1
            while j < n and tokens[j] in CLOSING_QUOTES:
                j += 1
            out.append((start, j))
            start = i = j
            continue
        i += 1
    if start < n:
        out.append((start, n))
    return out


def decode_support(p_support: np.ndarray, segmentation: Sequence[tuple[int, int]],
                   answer_span: tuple[int, int] | None = None,
                   enforce_containment: bool = False) -> tuple[int, float]:
    """Index of the sentence with the highest mean support probability.

    ``segmentation`` ranges index into ``p_support``. With
    ``enforce_containment`` only sentences overlapping ``answer_span``
    (inclusive) compete, unless none does.
    """
    p = np.asarray(p_support, dtype=np.float64)
    best, best_score = -1, -np.inf
    allowed = range(len(segmentation))
    if enforce_containment and answer_span is not None:
        a, b = answer_span
        hits = [k for k, (s, e) in enumerate(segmentation) if s <= b and a < e]
        if hits:
            allowed = hits
    for k in allowed:
        s, e = segmentation[k]
        score = float(p[s:e].mean())
        if score > best_score:
            best, best_score = k, score
    return best, best_score
