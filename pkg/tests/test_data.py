import dataclasses
import json

import numpy as np
import pytest

from kfmrc.checkpoint import CheckpointError, load_checkpoint, load_embeddings, save_checkpoint, save_embeddings
from kfmrc.data import DatasetError, QuadRecord, dumps_dataset, load_dataset, save_dataset, validate_record
from kfmrc.encoder import Vocabulary
from kfmrc.kg import KgTrainConfig, KnowledgeBase, train_embeddings
from kfmrc.synth import synth_generate, write_synth

GOOD = QuadRecord(id="r1", question="感冒吃什么药？", passage="感冒常用阿司匹林。注意休息。", answer_text="阿司匹林",
                  answer_start=4, answer_end=8, support_index=0)


def dump(tmp_path, records):
    p = tmp_path / "d.json"
    p.write_text(json.dumps([r if isinstance(r, dict) else r.to_json() for r in records], ensure_ascii=False),
                 encoding="utf-8")
    return p


class TestValidator:
    def test_valid_record(self, tmp_path):
        [rec] = load_dataset(dump(tmp_path, [GOOD]))
        assert rec == GOOD
        assert rec.support_text() == "感冒常用阿司匹林。"

    def test_offset_mismatch(self):
        with pytest.raises(DatasetError, match="r1"):
            validate_record(dataclasses.replace(GOOD, answer_start=3, answer_end=7))

    def test_containment_violation(self):
        with pytest.raises(DatasetError, match="does not contain"):
            validate_record(dataclasses.replace(GOOD, support_index=1))

    def test_over_length_answer(self):
        passage = "答" * 50 + "。"
        rec = dataclasses.replace(GOOD, passage=passage, answer_text="答" * 41, answer_start=0, answer_end=41)
        with pytest.raises(DatasetError, match="limit"):
            validate_record(rec)
        validate_record(dataclasses.replace(rec, answer_text="答" * 40, answer_end=40))

    def test_missing_field(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(dump(tmp_path, [{"id": "x", "question": "q"}]))

    def test_char_support_range(self):
        validate_record(dataclasses.replace(GOOD, support_index=None, support_start=0, support_end=9))

    def test_not_an_array(self, tmp_path):
        p = tmp_path / "d.json"
        p.write_text("{}", encoding="utf-8")
        with pytest.raises(ValueError):
            load_dataset(p)

    def test_save_round_trip(self, tmp_path):
        save_dataset(tmp_path / "a.json", [GOOD])
        assert load_dataset(tmp_path / "a.json") == [GOOD]


class TestSynth:
    def test_deterministic_bytes(self, tmp_path):
        for name in ("a", "b"):
            recs, triples = synth_generate(5, 20, kb_size=50, alias_rate=0.5)
            write_synth(recs, triples, tmp_path / f"{name}.json", tmp_path / f"{name}.tsv")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
        other, _ = synth_generate(6, 20, kb_size=50, alias_rate=0.5)
        assert dumps_dataset(other) != dumps_dataset(recs)

    def test_records_validate(self):
        recs, _ = synth_generate(0, 50, kb_size=100, alias_rate=0.5)
        for r in recs:
            validate_record(r)

    def test_alias_rate_zero_surface_present(self):
        recs, triples = synth_generate(1, 40, kb_size=50, alias_rate=0.0)
        for r in recs:
            q = r.candidates[0]
            assert q.field == "question"
            assert r.question[q.char_start:q.char_end] in r.passage

    def test_alias_rate_one_key_absent(self):
        recs, triples = synth_generate(1, 40, kb_size=50, alias_rate=1.0)
        aliases = {(s, o) for s, rel, o in triples if rel == "别名"}
        for r in recs:
            q = r.candidates[0]
            key = r.question[q.char_start:q.char_end]
            assert key not in r.passage
            assert any(a == key and s in r.passage for s, a in aliases)

    def test_kb_size_counts_entities(self):
        _, triples = synth_generate(0, 1, kb_size=50)
        assert KnowledgeBase.from_triples(triples).num_entities == 50

    def test_relations_filter(self):
        recs, _ = synth_generate(0, 30, kb_size=50, relations=("drug",))
        assert all(r.question.endswith("用什么药物治疗？") for r in recs)
        with pytest.raises(ValueError):
            synth_generate(0, 3, relations=("dose",))

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            synth_generate(0, 0)
        with pytest.raises(ValueError):
            synth_generate(0, 3, alias_rate=1.5)


class TestCheckpoint:
    def arrays(self):
        rng = np.random.default_rng(0)
        return {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=5).astype(np.float32)}

    def test_round_trip_bytes(self, tmp_path):
        vocab = Vocabulary.from_texts(["感冒药"])
        save_checkpoint(tmp_path / "one", self.arrays(), {"x": 1, "y": [1, 2]}, step=7, vocab=vocab,
                        trainable={"b": False})
        ck = load_checkpoint(tmp_path / "one")
        assert ck.step == 7 and ck.trainable == {"a": True, "b": False}
        assert ck.arrays["b"].dtype == np.float32
        save_checkpoint(tmp_path / "two", ck.arrays, ck.config, ck.step, ck.vocab, ck.trainable)
        for f in ("manifest.json", "params.bin", "vocab.txt"):
            assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()

    def test_corrupt_sidecar(self, tmp_path):
        save_checkpoint(tmp_path, self.arrays(), {})
        blob = bytearray((tmp_path / "params.bin").read_bytes())
        blob[0] ^= 1
        (tmp_path / "params.bin").write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="hash"):
            load_checkpoint(tmp_path)

    def test_vocab_mismatch(self, tmp_path):
        save_checkpoint(tmp_path, self.arrays(), {}, vocab=Vocabulary.from_texts(["甲"]))
        (tmp_path / "vocab.txt").write_text("乙\n", encoding="utf-8")
        with pytest.raises(CheckpointError, match="vocabulary"):
            load_checkpoint(tmp_path)

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope")

    def test_integer_array_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path, {"i": np.arange(3)}, {})

    def test_embeddings(self, tmp_path):
        kb = KnowledgeBase.from_triples([("A", "r", "B"), ("B", "r", "C")])
        emb = train_embeddings(kb, KgTrainConfig(d2=4, epochs=3))
        save_embeddings(tmp_path, kb, emb, {"d2": 4})
        got, ents, rels = load_embeddings(tmp_path)
        np.testing.assert_array_equal(got.entities, emb.entities)
        assert ents == ["A", "B", "C"] and rels == ["r"]
        assert got.loss_history == emb.loss_history

    def test_non_kg_checkpoint(self, tmp_path):
        save_checkpoint(tmp_path, self.arrays(), {})
        with pytest.raises(CheckpointError):
            load_embeddings(tmp_path)
