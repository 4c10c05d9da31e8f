"""
From triples to per-token entity sets
=====================================

Train translation embeddings on a toy graph, then link the mentions of a
sentence to KB entities by exact, edit-distance and overlap matching.
"""

import numpy as np

from kfmrc.kg import KgTrainConfig, KnowledgeBase, nearest_neighbors, score_triple, train_embeddings
from kfmrc.retrieval import CandidateSpan, RetrievalConfig, build_token_entity_map, match_entity

triples = [
    ("感冒", "药物", "阿司匹林"),
    ("感冒", "症状", "发热"),
    ("偏头痛", "药物", "布洛芬"),
    ("偏头痛", "症状", "头痛"),
    ("阿司匹林", "类别", "药物"),
    ("布洛芬", "类别", "药物"),
    ("发热", "类别", "症状"),
    ("头痛", "类别", "症状"),
]
kb = KnowledgeBase.from_triples(triples)
emb = train_embeddings(kb, KgTrainConfig(d2=16, epochs=200, seed=0))
print("epoch loss", round(emb.loss_history[0], 3), "->", round(emb.loss_history[-1], 3))

# Lower score means more plausible.
e, r = kb.entities, kb.relations
print("感冒 药物 阿司匹林", round(score_triple(kb, emb, e["感冒"], r["药物"], e["阿司匹林"]), 3))
print("感冒 药物 头痛    ", round(score_triple(kb, emb, e["感冒"], r["药物"], e["头痛"]), 3))

names = kb.entity_names()
print("neighbors of 布洛芬:", [(names[i], round(d, 2)) for i, d in nearest_neighbors(emb, e["布洛芬"], 3)])

# Matching: a near-miss spelling is caught by edit distance.
for surface in ("阿司匹林", "阿斯匹林", "偏头疼", "头痛药"):
    hits = match_entity(surface, kb, RetrievalConfig())
    print(surface, [(names[m.entity_id], m.strategy, m.score) for m in hits])

# Every token inside a candidate span inherits the span's matches.
sentence = list("服阿斯匹林退热")
tem = build_token_entity_map(len(sentence), [CandidateSpan(1, 5, "阿斯匹林")], kb, RetrievalConfig())
for tok, ids in zip(sentence, tem.entities):
    print(tok, [names[i] for i in ids])
