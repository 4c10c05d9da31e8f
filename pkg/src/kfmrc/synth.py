"""Seeded synthetic medical reading-comprehension corpus with a matching toy KB.

Every disease group contributes a disease, an alias, a drug, a symptom and an
examination, all with random character names. Passages state one fact per
sentence in type-neutral frames, so which mention answers "which drug" is
recoverable from the knowledge base (entity types) rather than from the
wording. Questions name the disease by its alias with probability
``alias_rate``, in which case the key term never appears in the passage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Candidate, QuadRecord, dumps_dataset
from .kg import write_triples

__all__ = ["CLASS_NODES", "EntityGroup", "synth_kb", "synth_generate", "write_synth"]

_NAME_CHARS = (
    "安宁康泰和平福瑞祥丰华盛嘉乐明清源远志恒永长金银玉石松柏林森云霞雪霜"
    "青白赤紫黄蓝红绿丹参芪苓术桂枝芍归芎柴胡连翘菊葛根茯枳朴陈皮夏蒌贝母"
    "冬春秋梅兰竹荷桃李杏橘柚栀蓟藤萝葵芦苇蒲艾茜芷薇苍翠碧琥珀晶岩峰川溪泉湖岚"
)
CLASS_NODES = ("医学概念", "疾病", "药物", "症状", "检查")
_TYPE, _IS_A = "类别", "上位"
_RELATIONS = {"drug": "治疗药物", "symptom": "常见症状", "exam": "检查项目"}
_ALIAS = "别名"
_TYPE_CLASS = {"drug": "药物", "symptom": "症状", "exam": "检查"}

# Every frame has the same length with the disease at offset 0 and the
# other mention at offset 4, so mention boundaries sit at fixed positions and
# only the mention's type decides the answer.
_FRAMES = (
    "{d}与{e}有关。",
    "{d}及{e}相关。",
    "{d}同{e}相系。",
)
_QUESTIONS = {
    "drug": "{q}用什么药物治疗？",
    "symptom": "{q}有哪些常见症状？",
    "exam": "{q}需要做什么检查？",
}
_FILLERS = ("{d}是一种常见疾病。", "{d}患者应当注意休息。", "早期发现{d}十分重要。")


@dataclass(frozen=True)
class EntityGroup:
    disease: str
    alias: str
    drug: str
    symptom: str
    exam: str

    def of(self, kind: str) -> str:
        return getattr(self, kind)


def _names(rng: np.random.Generator, count: int) -> list[str]:
    """Three-character names, no two sharing a pair of characters.

    That keeps every pair of names at edit distance >= 2 with at most one
    character in common, so fuzzy retrieval never links one name to another.
    """
    chars = list(_NAME_CHARS)
    used: set[frozenset] = set()
    out: list[str] = []
    for _ in range(200 * count):
        if len(out) == count:
            break
        picks = [chars[int(i)] for i in rng.choice(len(chars), 3, replace=False)]
        pairs = {frozenset(p) for p in ((picks[0], picks[1]), (picks[0], picks[2]), (picks[1], picks[2]))}
        if used & pairs:
            continue
        used |= pairs
        out.append("".join(picks))
    if len(out) < count:
        raise ValueError(f"cannot draw {count} mutually distinct names; use a smaller kb_size")
    return out


def synth_kb(seed: int, kb_size: int) -> tuple[list[EntityGroup], list[tuple[str, str, str]]]:
    """Entity groups and triples; the KB holds ``5 + 5 * groups`` entities with
    ``groups = max(1, (kb_size - 5) // 5)``."""
    rng = np.random.default_rng(seed)
    n_groups = max(1, (kb_size - len(CLASS_NODES)) // 5)
    names = _names(rng, 5 * n_groups)
    groups = [EntityGroup(*names[5 * g:5 * g + 5]) for g in range(n_groups)]
    triples = [(c, _IS_A, CLASS_NODES[0]) for c in CLASS_NODES[1:]]
    for g in groups:
        triples.append((g.disease, _TYPE, "疾病"))
        triples.append((g.alias, _TYPE, "疾病"))
        for kind, rel in _RELATIONS.items():
            triples.append((g.of(kind), _TYPE, _TYPE_CLASS[kind]))
            triples.append((g.disease, rel, g.of(kind)))
        triples.append((g.disease, _ALIAS, g.alias))
    return groups, triples


def _make_record(idx: int, g: EntityGroup, rng: np.random.Generator, alias_rate: float,
                 asks: tuple[str, ...]) -> QuadRecord:
    kinds = list(_RELATIONS)
    asked = asks[int(rng.integers(len(asks)))]
    use_alias = rng.random() < alias_rate
    key = g.alias if use_alias else g.disease
    question = _QUESTIONS[asked].format(q=key)

    order = [kinds[int(i)] for i in rng.permutation(len(kinds))]
    sentences: list[tuple[str, str | None]] = []
    for kind in order:
        frame = _FRAMES[int(rng.integers(len(_FRAMES)))]
        sentences.append((frame, kind))
    if rng.random() < 0.5:
        sentences.append((_FILLERS[int(rng.integers(len(_FILLERS)))], None))

    passage = ""
    cands: list[Candidate] = []
    answer = support = None
    for k, (frame, kind) in enumerate(sentences):
        start = len(passage)
        # assemble piecewise so mention offsets are exact
        text = ""
        i = 0
        while i < len(frame):
            if frame.startswith("{d}", i):
                cands.append(Candidate(start + len(text), start + len(text) + len(g.disease)))
                text += g.disease
                i += 3
            elif frame.startswith("{e}", i):
                ent = g.of(kind)
                s = start + len(text)
                cands.append(Candidate(s, s + len(ent)))
                if kind == asked:
                    answer = (ent, s, s + len(ent))
                    support = k
                text += ent
                i += 3
            else:
                text += frame[i]
                i += 1
        passage += text
    q_at = question.index(key)
    cands.insert(0, Candidate(q_at, q_at + len(key), field="question"))
    text, a0, a1 = answer
    return QuadRecord(
        id=f"synth-{idx:05d}",
        question=question,
        passage=passage,
        answer_text=text,
        answer_start=a0,
        answer_end=a1,
        support_index=support,
        additional_answers=[text, text],
        candidates=cands,
    )


def synth_generate(seed: int, n_examples: int, kb_size: int = 100, alias_rate: float = 0.0,
                   relations: tuple[str, ...] = ("drug", "symptom", "exam"),
                   ) -> tuple[list[QuadRecord], list[tuple[str, str, str]]]:
    """``relations`` limits which fact types questions ask about; passages
    always state all three."""
    relations = tuple(relations)
    if not relations or any(r not in _RELATIONS for r in relations):
        raise ValueError(f"relations must be a non-empty subset of {tuple(_RELATIONS)}")
    if n_examples < 1:
        raise ValueError("n_examples must be at least 1")
    if not 0.0 <= alias_rate <= 1.0:
        raise ValueError("alias_rate must lie in [0, 1]")
    groups, triples = synth_kb(seed, kb_size)
    rng = np.random.default_rng([seed, 1])
    records = []
    for idx in range(n_examples):
        g = groups[int(rng.integers(len(groups)))]
        records.append(_make_record(idx, g, rng, alias_rate, relations))
    return records, triples


def write_synth(records: list[QuadRecord], triples: list[tuple[str, str, str]], dataset_path, triples_path) -> None:
    with open(dataset_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_dataset(records))
    write_triples(triples_path, triples)
