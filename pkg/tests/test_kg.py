import numpy as np
import pytest

from kfmrc.kg import (
    EntityEmbedding,
    KgTrainConfig,
    KnowledgeBase,
    TripleParseError,
    load_triples,
    nearest_neighbors,
    score_triple,
    tail_rank,
    train_embeddings,
)


def write(tmp_path, text):
    p = tmp_path / "kg.tsv"
    p.write_text(text, encoding="utf-8")
    return p


class TestLoader:
    def test_two_lines(self, tmp_path):
        kb = load_triples(write(tmp_path, "A\tr\tB\nB\tr\tC\n"))
        assert (kb.num_entities, kb.num_relations, len(kb.triples)) == (3, 1, 2)
        assert kb.entity_names() == ["A", "B", "C"]

    def test_duplicate_dropped_and_counted(self, tmp_path):
        kb = load_triples(write(tmp_path, "A\tr\tB\nA\tr\tB\n"))
        assert len(kb.triples) == 1 and kb.duplicates == 1

    def test_comments_and_blanks(self, tmp_path):
        kb = load_triples(write(tmp_path, "# header\n\nA\tr\tB\r\n"))
        assert kb.triples == [(0, 0, 1)]

    @pytest.mark.parametrize("bad", ["A\tr\n", "A\tr\tB\tC\n", "A\t\tB\n"])
    def test_parse_error_names_line(self, tmp_path, bad):
        with pytest.raises(TripleParseError, match="line 2"):
            load_triples(write(tmp_path, "X\tr\tY\n" + bad))


class TestScore:
    def emb(self, eo, norm):
        return EntityEmbedding(np.array([[0.0, 0.0], eo]), np.array([[1.0, 0.0]]), norm)

    def test_exact_translation(self):
        assert score_triple(None, self.emb([1.0, 0.0], "L1"), 0, 0, 1) == 0.0

    def test_l1(self):
        assert score_triple(None, self.emb([0.0, 1.0], "L1"), 0, 0, 1) == 2.0

    def test_l2(self):
        assert score_triple(None, self.emb([0.0, 1.0], "L2"), 0, 0, 1) == pytest.approx(np.sqrt(2), abs=1e-15)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            score_triple(None, self.emb([0.0, 1.0], "L1"), 0, 1, 1)


CHAIN = [("A", "r", "B"), ("B", "r", "C"), ("A", "r2", "C")]


class TestTraining:
    def test_chain_ranking(self):
        kb = KnowledgeBase.from_triples(CHAIN)
        emb = train_embeddings(kb, KgTrainConfig(d2=8, epochs=200, seed=0))
        assert score_triple(kb, emb, 0, 0, 1) < score_triple(kb, emb, 0, 0, 2)

    def test_lr_zero_leaves_embeddings(self):
        kb = KnowledgeBase.from_triples([("A", "r", "B")])
        ref = train_embeddings(kb, KgTrainConfig(d2=4, epochs=0, seed=3))
        emb = train_embeddings(kb, KgTrainConfig(d2=4, epochs=1, lr=0.0, seed=3))
        np.testing.assert_array_equal(emb.entities, ref.entities)
        np.testing.assert_array_equal(emb.relations, ref.relations)

    def test_path_term_decreases(self):
        kb = KnowledgeBase.from_triples(CHAIN)
        emb = train_embeddings(kb, KgTrainConfig(d2=8, epochs=50, path_weight=0.5, seed=0))
        h = emb.path_history
        assert len(h) == 50 and h[-1] < h[0]
        r, r2 = emb.relations
        assert emb.distance(r + r - r2) < h[0] / 0.5

    def test_two_step_paths(self):
        kb = KnowledgeBase.from_triples(CHAIN)
        assert kb.two_step_paths() == [(0, 0, 1, 1.0)]

    def test_unit_norm_and_loss(self):
        rng = np.random.default_rng(0)
        names = [f"e{i}" for i in range(20)]
        triples = {(names[i], f"r{rng.integers(3)}", names[j]) for i, j in rng.integers(0, 20, (40, 2)) if i != j}
        kb = KnowledgeBase.from_triples(sorted(triples))
        emb = train_embeddings(kb, KgTrainConfig(d2=16, epochs=50, seed=1))
        np.testing.assert_allclose(np.linalg.norm(emb.entities, axis=1), 1.0, atol=1e-9)
        assert min(emb.loss_history) >= 0.0
        assert emb.loss_history[49] < emb.loss_history[0]

    def test_deterministic(self):
        kb = KnowledgeBase.from_triples(CHAIN)
        a = train_embeddings(kb, KgTrainConfig(d2=8, epochs=5, seed=7))
        b = train_embeddings(kb, KgTrainConfig(d2=8, epochs=5, seed=7))
        np.testing.assert_array_equal(a.entities, b.entities)
        assert a.loss_history == b.loss_history

    def test_empty_kb(self):
        with pytest.raises(ValueError):
            train_embeddings(KnowledgeBase(), KgTrainConfig())

    def test_bad_config(self):
        with pytest.raises(ValueError):
            KgTrainConfig(norm="L3")

    def test_tail_rank(self):
        emb = EntityEmbedding(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 0.0]]))
        assert tail_rank(emb, 0, 0, 1) == 1
        assert tail_rank(emb, 0, 0, 2) == 3


class TestNeighbors:
    def test_two_entities(self):
        emb = EntityEmbedding(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros((1, 2)))
        assert nearest_neighbors(emb, 0, 1) == [(1, pytest.approx(np.sqrt(2)))]

    def test_duplicate_first(self):
        emb = EntityEmbedding(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.zeros((1, 2)))
        assert nearest_neighbors(emb, 0, 1) == [(2, 0.0)]

    def test_full_ranking(self):
        emb = EntityEmbedding(np.array([[0.0], [3.0], [1.0], [2.0]]), np.zeros((1, 1)))
        assert [i for i, _ in nearest_neighbors(emb, 0, 3)] == [2, 3, 1]

    def test_k_bounds(self):
        emb = EntityEmbedding(np.zeros((3, 2)), np.zeros((1, 2)))
        with pytest.raises(ValueError):
            nearest_neighbors(emb, 0, 3)
