import numpy as np
import pytest

from kfmrc import autodiff as ad
from kfmrc.autodiff import Tensor
from kfmrc.encoder import (
    CLS,
    PAD,
    SEP,
    UNK,
    EncoderConfig,
    Vocabulary,
    encode,
    encode_batch,
    init_encoder_params,
    pack,
    split_tokens,
    tokenize,
)


class TestTokenize:
    def test_cjk(self):
        v = Vocabulary.from_texts(["感冒"])
        assert tokenize("感冒", v) == [4, 5]

    def test_ascii_grouping(self):
        assert [t for t, _, _ in split_tokens("20～24周")] == ["20", "～", "24", "周"]
        assert split_tokens("ab 1") == [("ab", 0, 2), ("1", 3, 4)]

    def test_empty(self):
        assert tokenize("", Vocabulary()) == []

    def test_unknown(self):
        assert tokenize("感", Vocabulary()) == [UNK]

    def test_reserved_layout(self):
        assert (CLS, SEP, PAD, UNK) == (0, 1, 2, 3)
        assert len(Vocabulary()) == 4

    def test_save_load(self, tmp_path):
        v = Vocabulary.from_texts(["感冒药 abc"])
        v.save(tmp_path / "v.txt")
        w = Vocabulary.load(tmp_path / "v.txt")
        assert w.itos == v.itos and w.digest() == v.digest()


class TestPack:
    def test_layout(self):
        seq = pack([10, 11], [20, 21, 22], 512)
        assert len(seq) == 8
        assert seq.passage_range == (4, 7)
        assert seq.ids.tolist() == [CLS, 10, 11, SEP, 20, 21, 22, SEP]
        assert seq.segment_ids.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]

    def test_passage_truncation(self):
        seq = pack([10], list(range(600)), 512)
        assert len(seq) == 512
        assert seq.passage_range[1] - seq.passage_range[0] == 508
        assert seq.truncated == 92

    def test_question_too_long(self):
        with pytest.raises(ValueError):
            pack(list(range(10)), [1], 12)

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            pack([], [1])

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            EncoderConfig(d1=10, heads=4)
        with pytest.raises(ValueError):
            EncoderConfig(max_seq_len=7)


def setup(layers=2, d1=8, heads=2, vocab=12, seed=0):
    cfg = EncoderConfig(d1=d1, layers=layers, heads=heads, ff=16, max_seq_len=16)
    return cfg, init_encoder_params(cfg, vocab, np.random.default_rng(seed))


class TestEncode:
    def test_zero_layers_is_embedding_sum(self):
        cfg, ps = setup(layers=0)
        seq = encode(pack([5, 6], [7, 8, 9], 16), ps, cfg)
        want = ps["enc.tok"].data[seq.ids] + ps["enc.pos"].data[:8] + ps["enc.seg"].data[seq.segment_ids]
        np.testing.assert_array_equal(seq.hidden, want)
        np.testing.assert_array_equal(seq.h_cls, want[0])

    def test_pad_tail_does_not_leak(self):
        cfg, ps = setup()
        rng = np.random.default_rng(1)
        ids = np.array([[CLS, 5, SEP, 7, 8, SEP, PAD, PAD, PAD]])
        seg = np.array([[0, 0, 0, 1, 1, 1, 1, 1, 1]])
        mask = ids != PAD
        base = encode_batch(ids, seg, mask, ps, cfg).data
        for _ in range(5):
            other = ids.copy()
            other[0, 6:] = rng.integers(4, 12, 3)
            got = encode_batch(other, seg, mask, ps, cfg).data
            np.testing.assert_allclose(got[0, :6], base[0, :6], rtol=0, atol=1e-12)

    def test_deterministic_bitwise(self):
        cfg, ps = setup()
        a = encode(pack([5], [6, 7], 16), ps, cfg).hidden
        b = encode(pack([5], [6, 7], 16), ps, cfg).hidden
        assert np.array_equal(a, b)

    def test_attention_rows_sum_to_one(self):
        cfg, ps = setup()
        ids = np.array([[CLS, 5, SEP, 7, 8, SEP, PAD, PAD]])
        log = []
        encode_batch(ids, np.zeros_like(ids), ids != PAD, ps, cfg, attn_log=log)
        assert len(log) == 2
        for a in log:
            np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-6)
            assert np.all(a[..., 6:] == 0.0)

    def test_length_limit(self):
        cfg, ps = setup()
        ids = np.full((1, 17), 5)
        with pytest.raises(ValueError):
            encode_batch(ids, np.zeros_like(ids), np.ones_like(ids, dtype=bool), ps, cfg)

    def test_gradient_two_layers(self):
        cfg, ps = setup(layers=2, d1=8, heads=2)
        ids = np.array([[CLS, 5, SEP, 7, 8, 9, SEP, PAD]])
        seg = np.array([[0, 0, 0, 1, 1, 1, 1, 1]])
        target = np.random.default_rng(2).normal(size=(1, 8, 8))

        def loss():
            H = encode_batch(ids, seg, ids != PAD, ps, cfg)
            return (H * Tensor(target)).sum()

        assert ad.grad_check(ps, loss) < 1e-3
