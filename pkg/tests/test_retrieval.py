import json
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from kfmrc.kg import KnowledgeBase
from kfmrc.retrieval import (
    CandidateSpan,
    RetrievalConfig,
    build_token_entity_map,
    char_overlap,
    dictionary_candidates,
    levenshtein,
    match_entity,
)

GOLDEN = json.loads((Path(__file__).parent / "data" / "retrieval_golden.json").read_text(encoding="utf-8"))


def kb_of(names):
    kb = KnowledgeBase()
    for n in names:
        kb.add_entity(n)
    return kb


def oracle_edit(a, b):
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def oracle_overlap(a, b):
    rest = list(b)
    n = 0
    for ch in a:
        if ch in rest:
            rest.remove(ch)
            n += 1
    return n


def oracle_match(surface, names, edit_threshold=2, overlap_ratio=0.5):
    """Brute-force restatement of the three strategies with precedence."""
    rows = []
    for eid, name in enumerate(names):
        if name == surface:
            rows.append((0, Fraction(0), eid, name, "exact", Fraction(0)))
        elif oracle_edit(surface, name) < edit_threshold:
            d = oracle_edit(surface, name)
            rows.append((1, Fraction(d), eid, name, "edit", Fraction(d)))
        else:
            ov = oracle_overlap(surface, name)
            if ov > Fraction(overlap_ratio).limit_denominator() * len(surface):
                r = Fraction(ov, len(surface))
                rows.append((2, -r, eid, name, "overlap", r))
    rows.sort()
    return [(r[3], r[4], r[5]) for r in rows]


class TestLevenshtein:
    @pytest.mark.parametrize("a,b,d", [("感冒", "感冒", 0), ("感冒", "感冒药", 1), ("kitten", "sitting", 3),
                                       ("", "abc", 3), ("血小板", "", 3), ("偏头疼", "头痛", 2)])
    def test_examples(self, a, b, d):
        assert levenshtein(a, b) == d

    @settings(max_examples=200, deadline=None)
    @given(st.text("甲乙丙丁ab", max_size=7), st.text("甲乙丙丁ab", max_size=7))
    def test_against_recursive_oracle(self, a, b):
        assert levenshtein(a, b) == oracle_edit(a, b) == levenshtein(b, a)

    @settings(max_examples=200, deadline=None)
    @given(st.text("甲乙丙丁ab", max_size=7), st.text("甲乙丙丁ab", max_size=7))
    def test_overlap_oracle(self, a, b):
        assert char_overlap(a, b) == oracle_overlap(a, b)


class TestMatchEntity:
    def test_reference_examples(self):
        kb = kb_of(["糖尿病", "感冒药", "血小板"])
        cfg = RetrievalConfig()
        [m] = match_entity("糖尿病", kb, cfg)
        assert (m.entity_id, m.strategy, m.score) == (0, "exact", 0.0)
        [m] = match_entity("感冒", kb, cfg)
        assert (m.entity_id, m.strategy, m.score) == (1, "edit", 1.0)
        assert match_entity("血小板无力症", kb, cfg) == []

    @pytest.mark.parametrize("case", GOLDEN["cases"], ids=lambda c: c["candidate"] + str(c.get("config", "")))
    def test_golden_table(self, case):
        names = GOLDEN["entities"]
        cfg = RetrievalConfig(**case.get("config", {}))
        got = [(names[m.entity_id], m.strategy, m.score) for m in match_entity(case["candidate"], kb_of(names), cfg)]
        want = [(n, s, Fraction(*q)) for n, s, q in case["expected"]]
        assert [(n, s) for n, s, _ in got] == [(n, s) for n, s, _ in want]
        assert [sc for *_, sc in got] == [float(q) for *_, q in want]
        # the hand table agrees with the brute-force oracle too
        assert oracle_match(case["candidate"], names, cfg.edit_threshold, cfg.overlap_ratio) == want

    def test_golden_table_size(self):
        assert len(GOLDEN["cases"]) == 30

    @settings(max_examples=150, deadline=None)
    @given(st.text("甲乙丙丁戊", min_size=1, max_size=5),
           st.lists(st.text("甲乙丙丁戊", min_size=1, max_size=5), min_size=1, max_size=8, unique=True))
    def test_random_against_oracle(self, surface, names):
        got = [(names[m.entity_id], m.strategy, m.score) for m in match_entity(surface, kb_of(names), RetrievalConfig())]
        want = [(n, s, float(q)) for n, s, q in oracle_match(surface, names)]
        assert got == want

    @settings(max_examples=150, deadline=None)
    @given(st.text("甲乙丙丁", min_size=1, max_size=5),
           st.lists(st.text("甲乙丙丁", min_size=1, max_size=5), min_size=1, max_size=8, unique=True),
           st.integers(1, 3), st.sampled_from([0.25, 0.5, 0.75]))
    def test_monotone_in_thresholds(self, surface, names, t, r):
        kb = kb_of(names)

        def ids(cfg):
            return {m.entity_id for m in match_entity(surface, kb, cfg)}

        assert ids(RetrievalConfig(edit_threshold=t, overlap_ratio=r)) <= ids(RetrievalConfig(edit_threshold=t + 1, overlap_ratio=r))
        assert ids(RetrievalConfig(edit_threshold=t, overlap_ratio=r)) <= ids(RetrievalConfig(edit_threshold=t, overlap_ratio=r / 2))

    def test_exact_first_with_zero_score(self):
        ms = match_entity("感冒", kb_of(["感冒药", "感冒", "冒"]), RetrievalConfig())
        assert ms[0].strategy == "exact" and ms[0].score == 0.0
        assert all(m.strategy != "exact" for m in ms[1:])

    def test_bad_config(self):
        with pytest.raises(ValueError):
            RetrievalConfig(k_max=0)


class TestTokenEntityMap:
    def test_covering_tokens_inherit(self):
        kb = kb_of(["感冒", "感冒药"])
        tem = build_token_entity_map(8, [CandidateSpan(3, 5, "感冒")], kb, RetrievalConfig())
        assert tem[3] == tem[4] == [0, 1]
        assert all(tem[i] == [] for i in (0, 1, 2, 5, 6, 7))
        assert len(tem) == 8

    def test_overlapping_candidates_union(self):
        kb = kb_of(["高血压", "低血压", "血小板"])
        cands = [CandidateSpan(0, 3, "高血压"), CandidateSpan(1, 4, "血小板")]
        tem = build_token_entity_map(5, cands, kb, RetrievalConfig())
        assert tem[0] == [0, 1]
        assert tem[1] == [0, 2, 1]  # exact 高血压 and exact 血小板 before edit 低血压
        assert tem[3] == [2]
        for ids in tem.entities:
            assert len(ids) == len(set(ids))

    def test_kmax_truncation(self):
        names = [f"甲{c}" for c in "一二三四五六七八九十"]
        kb = kb_of(names)
        tem = build_token_entity_map(3, [CandidateSpan(0, 2, "甲零")], kb, RetrievalConfig(k_max=8))
        assert tem.k == [8, 8, 0]
        assert tem[0] == list(range(8))

    def test_out_of_bounds(self):
        with pytest.raises(IndexError):
            build_token_entity_map(3, [CandidateSpan(2, 4, "感冒")], kb_of(["感冒"]), RetrievalConfig())

    def test_candidate_span_validation(self):
        with pytest.raises(ValueError):
            CandidateSpan(2, 2, "")
        with pytest.raises(ValueError):
            CandidateSpan(0, 1, "x", "verb")


def test_dictionary_candidates_leftmost_longest():
    kb = kb_of(["感冒", "感冒药", "头痛"])
    toks = list("服用感冒药治头痛")
    spans = dictionary_candidates(toks, kb, offset=10)
    assert [(c.start, c.end, c.surface) for c in spans] == [(12, 15, "感冒药"), (16, 18, "头痛")]
