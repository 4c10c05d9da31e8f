"""Link candidate mentions to knowledge-base entities.

Three string strategies are tried against every entity surface: exact match,
edit distance strictly below a threshold, and a character overlap larger than
a fraction of the candidate's own length. Token positions covered by a
candidate inherit its matches.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .kg import KnowledgeBase

__all__ = [
    "LEXICAL_CLASSES",
    "STRATEGIES",
    "CandidateSpan",
    "MatchResult",
    "RetrievalConfig",
    "TokenEntityMap",
    "levenshtein",
    "char_overlap",
    "match_entity",
    "build_token_entity_map",
    "dictionary_candidates",
]

LEXICAL_CLASSES = ("noun", "time", "location", "direction", "numeric")
STRATEGIES = ("exact", "edit", "overlap")
_PRECEDENCE = {s: i for i, s in enumerate(STRATEGIES)}


@dataclass(frozen=True)
class CandidateSpan:
    start: int
    end: int
    surface: str
    lexical_class: str = "noun"

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"empty candidate span [{self.start}, {self.end})")
        if self.lexical_class not in LEXICAL_CLASSES:
            raise ValueError(f"unknown lexical class {self.lexical_class!r}")


@dataclass(frozen=True)
class MatchResult:
    entity_id: int
    strategy: str
    score: float

    def sort_key(self) -> tuple:
        # overlap ratio: larger is better, so it sorts descending
        s = -self.score if self.strategy == "overlap" else self.score
        return (_PRECEDENCE[self.strategy], s, self.entity_id)


@dataclass(frozen=True)
class RetrievalConfig:
    edit_threshold: int = 2
    overlap_ratio: float = 0.5
    k_max: int = 8

    def __post_init__(self):
        if self.edit_threshold <= 0 or self.overlap_ratio <= 0 or self.k_max < 1:
            raise ValueError("thresholds must be positive and k_max >= 1")


@dataclass
class TokenEntityMap:
    entities: list[list[int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entities)

    def __getitem__(self, i: int) -> list[int]:
        return self.entities[i]

    @property
    def k(self) -> list[int]:
        return [len(e) for e in self.entities]

    @classmethod
    def empty(cls, length: int) -> "TokenEntityMap":
        return cls([[] for _ in range(length)])


def levenshtein(a: str, b: str) -> int:
    """Unit-cost character edit distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def char_overlap(a: str, b: str) -> int:
    """Size of the character multiset intersection."""
    return sum((Counter(a) & Counter(b)).values())


def match_entity(candidate: CandidateSpan | str, kb: KnowledgeBase, cfg: RetrievalConfig) -> list[MatchResult]:
    surface = candidate.surface if isinstance(candidate, CandidateSpan) else candidate
    found: dict[int, MatchResult] = {}
    n = len(surface)
    for name, eid in kb.entities.items():
        if name == surface:
            found[eid] = MatchResult(eid, "exact", 0.0)
            continue
        if abs(len(name) - n) < cfg.edit_threshold:
            d = levenshtein(surface, name)
            if d < cfg.edit_threshold:
                found[eid] = MatchResult(eid, "edit", float(d))
                continue
        ov = char_overlap(surface, name)
        if n and ov > cfg.overlap_ratio * n:
            found[eid] = MatchResult(eid, "overlap", ov / n)
    return sorted(found.values(), key=MatchResult.sort_key)


def build_token_entity_map(
    seq_len: int,
    candidates: Iterable[CandidateSpan],
    kb: KnowledgeBase,
    cfg: RetrievalConfig,
) -> TokenEntityMap:
    best: list[dict[int, MatchResult]] = [{} for _ in range(seq_len)]
    cache: dict[str, list[MatchResult]] = {}
    for cand in candidates:
        if cand.start < 0 or cand.end > seq_len:
            raise IndexError(f"candidate [{cand.start}, {cand.end}) outside sequence of length {seq_len}")
        if cand.surface not in cache:
            cache[cand.surface] = match_entity(cand, kb, cfg)
        for m in cache[cand.surface]:
            for i in range(cand.start, cand.end):
                cur = best[i].get(m.entity_id)
                if cur is None or m.sort_key() < cur.sort_key():
                    best[i][m.entity_id] = m
    out = []
    for slot in best:
        ranked = sorted(slot.values(), key=MatchResult.sort_key)[: cfg.k_max]
        out.append([m.entity_id for m in ranked])
    return TokenEntityMap(out)


def dictionary_candidates(
    tokens: Sequence[str], kb: KnowledgeBase, offset: int = 0, max_len: int | None = None
) -> list[CandidateSpan]:
    """Greedy leftmost-longest scan for entity surfaces over a token list.

    Used when a record carries no annotated candidates. Spans are reported
    relative to ``offset`` (the first token's packed-sequence index).
    """
    if max_len is None:
        max_len = max((len(e) for e in kb.entities), default=0)
    out = []
    i = 0
    while i < len(tokens):
        hit = None
        text = ""
        for j in range(i, len(tokens)):
            text += tokens[j]
            if len(text) > max_len:
                break
            if text in kb.entities:
                hit = (j + 1, text)
        if hit is None:
            i += 1
            continue
        out.append(CandidateSpan(offset + i, offset + hit[0], hit[1]))
        i = hit[0]
    return out
