"""Turn records into packed, retrieval-annotated model inputs and batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import QuadRecord
from .decode import segment_sentences
from .encoder import PAD, EncodedSequence, Vocabulary, pack, split_tokens
from .kg import KnowledgeBase
from .retrieval import (CandidateSpan, RetrievalConfig, TokenEntityMap, build_token_entity_map,
                        dictionary_candidates)

__all__ = ["Example", "Batch", "featurize", "collate", "char_span_to_tokens"]


@dataclass
class Example:
    record: QuadRecord
    seq: EncodedSequence
    passage_offsets: list[tuple[int, int]]
    entity_map: TokenEntityMap
    sentences: list[tuple[int, int]]
    start: int | None = None
    end: int | None = None
    support_sentence: int | None = None

    @property
    def has_gold(self) -> bool:
        return self.start is not None and self.support_sentence is not None

    def passage_tokens_to_text(self, i: int, j: int) -> str:
        """Passage slice covered by packed token positions ``i..j`` inclusive."""
        p0 = self.seq.passage_range[0]
        return self.record.passage[self.passage_offsets[i - p0][0]:self.passage_offsets[j - p0][1]]

    def sentence_text(self, k: int) -> str:
        s, e = self.sentences[k]
        return self.record.passage[self.passage_offsets[s][0]:self.passage_offsets[e - 1][1]]

    def sentence_packed_range(self, k: int) -> tuple[int, int]:
        p0 = self.seq.passage_range[0]
        s, e = self.sentences[k]
        return p0 + s, p0 + e


def char_span_to_tokens(offsets: list[tuple[int, int]], cs: int, ce: int) -> tuple[int, int] | None:
    """Half-open token range overlapping the char range, or None."""
    hit = [i for i, (s, e) in enumerate(offsets) if s < ce and e > cs]
    if not hit:
        return None
    return hit[0], hit[-1] + 1


def featurize(rec: QuadRecord, vocab: Vocabulary, kb: KnowledgeBase | None, rcfg: RetrievalConfig,
              max_seq_len: int = 512) -> Example:
    q_toks = split_tokens(rec.question)
    p_toks = split_tokens(rec.passage)
    seq = pack([vocab.id(t) for t, _, _ in q_toks], [vocab.id(t) for t, _, _ in p_toks], max_seq_len)
    q0, q1 = seq.question_range
    p0, p1 = seq.passage_range
    q_off = [(s, e) for _, s, e in q_toks]
    p_off = [(s, e) for _, s, e in p_toks][: p1 - p0]
    p_str = [t for t, _, _ in p_toks][: p1 - p0]

    entity_map = TokenEntityMap.empty(len(seq))
    if kb is not None and kb.num_entities:
        cands: list[CandidateSpan] = []
        if rec.candidates is not None:
            for c in rec.candidates:
                text, offs, base = (rec.question, q_off, q0) if c.field == "question" else (rec.passage, p_off, p0)
                rng = char_span_to_tokens(offs, c.char_start, c.char_end)
                if rng is None:
                    continue
                cands.append(CandidateSpan(base + rng[0], base + rng[1], text[c.char_start:c.char_end],
                                           c.lexical_class))
        else:
            cands += dictionary_candidates([t for t, _, _ in q_toks], kb, offset=q0)
            cands += dictionary_candidates(p_str, kb, offset=p0)
        entity_map = build_token_entity_map(len(seq), cands, kb, rcfg)

    sentences = segment_sentences(p_str)
    ex = Example(rec, seq, p_off, entity_map, sentences)
    span = char_span_to_tokens(p_off, rec.answer_start, rec.answer_end)
    if span is not None and p_off[span[1] - 1][1] >= rec.answer_end:
        ex.start, ex.end = p0 + span[0], p0 + span[1] - 1
        ex.support_sentence = _sentence_at(sentences, p_off, rec.support_range()[0])
        if ex.support_sentence is None:
            ex.support_sentence = _sentence_at(sentences, p_off, rec.answer_start)
    return ex


def _sentence_at(sentences, offsets, char: int) -> int | None:
    for k, (s, e) in enumerate(sentences):
        if offsets[s][0] <= char < offsets[e - 1][1]:
            return k
    return None


@dataclass
class Batch:
    ids: np.ndarray
    segment_ids: np.ndarray
    pad_mask: np.ndarray
    passage_mask: np.ndarray
    entity_ids: np.ndarray
    entity_mask: np.ndarray
    starts: np.ndarray | None = None
    ends: np.ndarray | None = None
    support_labels: np.ndarray | None = None
    support_region: np.ndarray | None = None
    answer_region: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.ids.shape[1]


def collate(examples: list[Example], with_gold: bool = True) -> Batch:
    B = len(examples)
    T = max(len(ex.seq) for ex in examples)
    K = max(1, max(max(ex.entity_map.k, default=0) for ex in examples))
    ids = np.full((B, T), PAD, dtype=np.int64)
    seg = np.zeros((B, T), dtype=np.int64)
    pad = np.zeros((B, T), dtype=bool)
    pmask = np.zeros((B, T), dtype=bool)
    eids = np.zeros((B, T, K), dtype=np.int64)
    emask = np.zeros((B, T, K), dtype=bool)
    for b, ex in enumerate(examples):
        n = len(ex.seq)
        ids[b, :n] = ex.seq.ids
        seg[b, :n] = ex.seq.segment_ids
        pad[b, :n] = True
        pmask[b, slice(*ex.seq.passage_range)] = True
        for i, ents in enumerate(ex.entity_map.entities):
            eids[b, i, :len(ents)] = ents
            emask[b, i, :len(ents)] = True
    batch = Batch(ids, seg, pad, pmask, eids, emask)
    if with_gold:
        if not all(ex.has_gold for ex in examples):
            raise ValueError("every example in a training batch needs a gold answer and support sentence")
        batch.starts = np.array([ex.start for ex in examples], dtype=np.int64)
        batch.ends = np.array([ex.end for ex in examples], dtype=np.int64)
        batch.support_labels = np.zeros((B, T))
        batch.support_region = np.zeros((B, T), dtype=bool)
        batch.answer_region = np.zeros((B, T), dtype=bool)
        for b, ex in enumerate(examples):
            s, e = ex.sentence_packed_range(ex.support_sentence)
            batch.support_labels[b, s:e] = 1.0
            batch.support_region[b, s:e] = True
            batch.answer_region[b, ex.start:ex.end + 1] = True
    return batch
