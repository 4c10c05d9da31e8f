"""Triple store and translational entity embeddings.

Entities and relations share one vector space; a triple ``(s, r, o)`` scores
``||e_s + r_r - e_o||`` (lower is more plausible). Training minimizes a margin
ranking loss against corrupted triples, optionally adding a composition
penalty that asks two-step relation paths ``s -r1-> m -r2-> o`` to add up to a
direct relation ``r`` between ``s`` and ``o``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "TripleParseError",
    "KnowledgeBase",
    "EntityEmbedding",
    "KgTrainConfig",
    "load_triples",
    "write_triples",
    "score_triple",
    "train_embeddings",
    "nearest_neighbors",
    "tail_rank",
]


class TripleParseError(ValueError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


@dataclass
class KnowledgeBase:
    entities: dict[str, int] = field(default_factory=dict)
    relations: dict[str, int] = field(default_factory=dict)
    triples: list[tuple[int, int, int]] = field(default_factory=list)
    duplicates: int = 0

    def __post_init__(self):
        self._triple_set: set[tuple[int, int, int]] = set(self.triples)
        self.adjacency: dict[int, list[tuple[int, int]]] = defaultdict(list)
        for s, r, o in self.triples:
            self.adjacency[s].append((r, o))

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def entity_names(self) -> list[str]:
        return list(self.entities)

    def relation_names(self) -> list[str]:
        return list(self.relations)

    def _intern(self, table: dict[str, int], key: str) -> int:
        idx = table.get(key)
        if idx is None:
            idx = table[key] = len(table)
        return idx

    def add(self, subject: str, relation: str, obj: str) -> bool:
        """Insert a triple by surface names; returns False for a duplicate."""
        t = (
            self._intern(self.entities, subject),
            self._intern(self.relations, relation),
            self._intern(self.entities, obj),
        )
        if t in self._triple_set:
            self.duplicates += 1
            return False
        self._triple_set.add(t)
        self.triples.append(t)
        self.adjacency[t[0]].append((t[1], t[2]))
        return True

    def add_entity(self, name: str) -> int:
        return self._intern(self.entities, name)

    def contains(self, s: int, r: int, o: int) -> bool:
        return (s, r, o) in self._triple_set

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[str, str, str]]) -> "KnowledgeBase":
        kb = cls()
        for s, r, o in triples:
            kb.add(s, r, o)
        return kb

    def two_step_paths(self) -> list[tuple[int, int, int, float]]:
        """Paths ``(r1, r2, r, reliability)`` for every triple ``(s, r, o)`` that
        also has a two-step route ``s -r1-> m -r2-> o``. Reliability is one over
        the number of such routes between ``s`` and ``o``."""
        out = []
        routes: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
        for s, first in self.adjacency.items():
            for r1, m in first:
                for r2, o in self.adjacency.get(m, ()):
                    routes[(s, o)].append((r1, r2))
        for s, r, o in self.triples:
            paths = routes.get((s, o))
            if not paths:
                continue
            rel = 1.0 / len(paths)
            out.extend((r1, r2, r, rel) for r1, r2 in paths)
        return out


def _iter_lines(path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            yield lineno, line.rstrip("\n").rstrip("\r")


def load_triples(path) -> KnowledgeBase:
    """Stream a ``subject<TAB>relation<TAB>object`` file into a KnowledgeBase.

    Blank lines and ``#`` comment lines are skipped. Ids follow first
    appearance; duplicate triples are dropped and counted in ``kb.duplicates``.
    """
    kb = KnowledgeBase()
    for lineno, line in _iter_lines(path):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise TripleParseError(lineno, line, f"expected 3 tab-separated columns, got {len(cols)}")
        if any(not c.strip() for c in cols):
            raise TripleParseError(lineno, line, "empty column")
        kb.add(*(c.strip() for c in cols))
    if kb.duplicates:
        logger.info("dropped %d duplicate triples from %s", kb.duplicates, path)
    return kb


def write_triples(path, triples: Iterable[tuple[str, str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s, r, o in triples:
            fh.write(f"{s}\t{r}\t{o}\n")


@dataclass
class KgTrainConfig:
    d2: int = 64
    margin: float = 1.0
    norm: str = "L1"
    negatives: int = 1
    lr: float = 0.01
    epochs: int = 200
    path_weight: float = 0.0
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.norm not in ("L1", "L2"):
            raise ValueError(f"norm must be L1 or L2, got {self.norm!r}")
        if self.d2 < 1 or self.negatives < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("d2, negatives and batch_size must be positive, epochs non-negative")
        if self.margin <= 0 or self.lr < 0 or self.path_weight < 0:
            raise ValueError("margin must be positive; lr and path_weight non-negative")


@dataclass
class EntityEmbedding:
    entities: np.ndarray
    relations: np.ndarray
    norm: str = "L1"
    loss_history: list[float] = field(default_factory=list)
    path_history: list[float] = field(default_factory=list)

    @property
    def d2(self) -> int:
        return self.entities.shape[1]

    def distance(self, diff: np.ndarray) -> np.ndarray:
        if self.norm == "L1":
            return np.abs(diff).sum(-1)
        return np.sqrt((diff * diff).sum(-1))


def score_triple(kb: KnowledgeBase | None, emb: EntityEmbedding, s: int, r: int, o: int) -> float:
    n_ent, n_rel = emb.entities.shape[0], emb.relations.shape[0]
    if kb is not None:
        n_ent, n_rel = min(n_ent, kb.num_entities), min(n_rel, kb.num_relations)
    for name, idx, n in (("subject", s, n_ent), ("relation", r, n_rel), ("object", o, n_ent)):
        if not 0 <= idx < n:
            raise IndexError(f"{name} id {idx} out of range [0, {n})")
    return float(emb.distance(emb.entities[s] + emb.relations[r] - emb.entities[o]))


def _dist_grad(diff: np.ndarray, norm: str) -> np.ndarray:
    if norm == "L1":
        return np.sign(diff)
    n = np.sqrt((diff * diff).sum(-1, keepdims=True))
    return diff / np.maximum(n, 1e-12)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)


def _corrupt(kb: KnowledgeBase, batch: np.ndarray, rng: np.random.Generator, tries: int = 20) -> np.ndarray:
    neg = batch.copy()
    n = kb.num_entities
    for row in neg:
        s, r, o = int(row[0]), int(row[1]), int(row[2])
        for _ in range(tries):
            cand = int(rng.integers(n))
            if rng.random() < 0.5:
                if not kb.contains(cand, r, o):
                    row[0] = cand
                    break
            elif not kb.contains(s, r, cand):
                row[2] = cand
                break
        else:
            # saturated neighborhood: leave the pair inert
            row[:] = (s, r, o)
    return neg


def train_embeddings(kb: KnowledgeBase, cfg: KgTrainConfig) -> EntityEmbedding:
    """Margin-ranking SGD with uniform head/tail corruption.

    Entity rows are renormalized to unit length after every update. The
    per-epoch mean margin loss lands in ``loss_history``; the mean weighted
    path-composition residual lands in ``path_history``.
    """
    if not kb.triples:
        raise ValueError("knowledge base has no triples")
    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / np.sqrt(cfg.d2)
    ent = _normalize_rows(rng.uniform(-bound, bound, (kb.num_entities, cfg.d2)))
    rel = _normalize_rows(rng.uniform(-bound, bound, (kb.num_relations, cfg.d2)))
    emb = EntityEmbedding(ent, rel, cfg.norm)
    triples = np.asarray(kb.triples, dtype=np.int64)
    paths = kb.two_step_paths() if cfg.path_weight > 0 else []
    if paths:
        p_arr = np.asarray([p[:3] for p in paths], dtype=np.int64)
        p_rel = np.asarray([p[3] for p in paths])

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(triples))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            pos = triples[order[start:start + cfg.batch_size]]
            pos = np.repeat(pos, cfg.negatives, axis=0)
            neg = _corrupt(kb, pos, rng)
            dp = ent[pos[:, 0]] + rel[pos[:, 1]] - ent[pos[:, 2]]
            dn = ent[neg[:, 0]] + rel[neg[:, 1]] - ent[neg[:, 2]]
            loss = np.maximum(0.0, cfg.margin + emb.distance(dp) - emb.distance(dn))
            if not np.all(np.isfinite(loss)):
                raise FloatingPointError(f"embedding loss diverged at epoch {epoch + 1}")
            total += float(loss.sum())
            count += len(loss)
            active = (loss > 0)[:, None]
            gp = _dist_grad(dp, cfg.norm) * active
            gn = _dist_grad(dn, cfg.norm) * active
            g_ent = np.zeros_like(ent)
            g_rel = np.zeros_like(rel)
            np.add.at(g_ent, pos[:, 0], gp)
            np.add.at(g_ent, pos[:, 2], -gp)
            np.add.at(g_rel, pos[:, 1], gp)
            np.add.at(g_ent, neg[:, 0], -gn)
            np.add.at(g_ent, neg[:, 2], gn)
            np.add.at(g_rel, neg[:, 1], -gn)
            if cfg.lr > 0:
                ent -= cfg.lr * g_ent
                rel -= cfg.lr * g_rel
                # renormalizing a unit row jitters its last bit; skip when frozen
                ent[:] = _normalize_rows(ent)
        emb.loss_history.append(total / max(count, 1))

        if paths:
            resid = rel[p_arr[:, 0]] + rel[p_arr[:, 1]] - rel[p_arr[:, 2]]
            term = cfg.path_weight * p_rel * emb.distance(resid)
            emb.path_history.append(float(term.sum()))
            g = cfg.path_weight * p_rel[:, None] * _dist_grad(resid, cfg.norm)
            g_rel = np.zeros_like(rel)
            np.add.at(g_rel, p_arr[:, 0], g)
            np.add.at(g_rel, p_arr[:, 1], g)
            np.add.at(g_rel, p_arr[:, 2], -g)
            rel -= cfg.lr * g_rel
        if not (np.all(np.isfinite(ent)) and np.all(np.isfinite(rel))):
            raise FloatingPointError(f"embeddings became non-finite at epoch {epoch + 1}")
    return emb


def nearest_neighbors(emb: EntityEmbedding, entity_id: int, k: int) -> list[tuple[int, float]]:
    n = emb.entities.shape[0]
    if not 0 < k < n:
        raise ValueError(f"k must lie in [1, {n - 1}]")
    d = np.linalg.norm(emb.entities - emb.entities[entity_id], axis=1)
    d[entity_id] = np.inf
    order = np.argsort(d, kind="stable")[:k]
    return [(int(i), float(d[i])) for i in order]


def tail_rank(emb: EntityEmbedding, s: int, r: int, o: int) -> int:
    """1-based rank of the true tail among all entities (raw setting)."""
    scores = emb.distance(emb.entities[s] + emb.relations[r] - emb.entities)
    return int((scores < scores[o]).sum()) + 1
