"""Unit tests for the table provider and the n-gram model."""

import math

import numpy as np
import pytest

from detoxkit.errors import ConfigError, ParameterError
from detoxkit.providers import (
    EOS_TOKEN,
    NgramModel,
    TableProvider,
    UNK_TOKEN,
    load_ngram,
    save_ngram,
    train_ngram,
)


class TestTableProvider:
    def test_default_row_serves_any_context(self):
        table = TableProvider(3, default_row=[1.0, 2.0, 3.0])
        assert np.array_equal(table.next_logits([0]), [1.0, 2.0, 3.0])
        assert np.array_equal(table.next_logits([2, 1, 0]), [1.0, 2.0, 3.0])

    def test_longest_suffix_wins(self):
        table = TableProvider(
            3,
            rows={
                (1,): [0.0, 1.0, 0.0],
                (0, 1): [9.0, 9.0, 9.0],
            },
            default_row=[5.0, 5.0, 5.0],
        )
        assert np.array_equal(table.next_logits([2, 0, 1]), [9.0, 9.0, 9.0])
        assert np.array_equal(table.next_logits([2, 1]), [0.0, 1.0, 0.0])
        assert np.array_equal(table.next_logits([2]), [5.0, 5.0, 5.0])

    def test_returned_array_is_a_copy(self):
        table = TableProvider(2, default_row=[1.0, 2.0])
        first = table.next_logits([0])
        first[0] = 99.0
        assert np.array_equal(table.next_logits([0]), [1.0, 2.0])

    def test_out_of_vocab_context_rejected(self):
        table = TableProvider(2)
        with pytest.raises(ParameterError):
            table.next_logits([5])

    def test_bad_row_shape_rejected(self):
        with pytest.raises(ConfigError):
            TableProvider(3, default_row=[1.0, 2.0])


class TestNgramModel:
    def vocab(self):
        return [EOS_TOKEN, UNK_TOKEN, "a", "b"]

    def test_add_k_formula(self):
        # Context "a" saw "b" twice; V=4, k=1: p(b|a) = (2+1)/(2+4) = 0.5,
        # p(other|a) = 1/6.
        model = NgramModel(2, self.vocab(), {(2,): {3: 2}}, smoothing_k=1.0)
        logits = model.next_logits([2])
        assert logits[3] == pytest.approx(math.log(0.5), abs=1e-12)
        for tok in (0, 1, 2):
            assert logits[tok] == pytest.approx(math.log(1.0 / 6.0), abs=1e-12)

    def test_logits_normalize(self):
        model = NgramModel(2, self.vocab(), {(2,): {3: 2, 0: 1}}, smoothing_k=0.5)
        probs = np.exp(model.next_logits([2]))
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_backoff_to_unigram(self):
        # Context "b" was never observed as a context, so the query backs
        # off to the unigram table.
        counts = {(2,): {3: 2}, (): {2: 3, 3: 2, 0: 1}}
        model = NgramModel(2, self.vocab(), counts, smoothing_k=1.0)
        from_b = model.next_logits([3])
        unigram_total = 6
        assert from_b[2] == pytest.approx(math.log((3 + 1) / (unigram_total + 4)), abs=1e-12)
        assert from_b[1] == pytest.approx(math.log(1 / (unigram_total + 4)), abs=1e-12)

    def test_empty_model_is_uniform(self):
        model = NgramModel(1, self.vocab(), {})
        logits = model.next_logits([2])
        assert np.allclose(logits, math.log(0.25), atol=1e-12)

    def test_purity(self):
        model = NgramModel(2, self.vocab(), {(2,): {3: 2}})
        a = model.next_logits([2])
        a[0] = 123.0
        b = model.next_logits([2])
        assert b[0] != 123.0

    def test_encode_maps_unknown_to_unk(self):
        model = NgramModel(1, self.vocab(), {})
        assert model.encode("a b zzz") == [2, 3, 1]

    def test_decode_tokens_roundtrip(self):
        model = NgramModel(1, self.vocab(), {})
        assert model.decode_tokens([2, 3, 2]) == "a b a"
        with pytest.raises(ParameterError):
            model.decode_tokens([99])

    def test_validation(self):
        with pytest.raises(ParameterError):
            NgramModel(0, self.vocab(), {})
        with pytest.raises(ParameterError):
            NgramModel(6, self.vocab(), {})
        with pytest.raises(ParameterError):
            NgramModel(1, ["a", "b"], {})  # reserved tokens missing
        with pytest.raises(ParameterError):
            NgramModel(2, self.vocab(), {(2,): {3: 0}})  # zero count stored
        with pytest.raises(ParameterError):
            NgramModel(2, self.vocab(), {(2, 3): {3: 1}})  # context too long
        with pytest.raises(ParameterError):
            NgramModel(2, self.vocab(), {}, smoothing_k=0.0)


class TestTrainNgram:
    def test_bigram_counts_from_tiny_corpus(self, tmp_path):
        corpus = tmp_path / "c.txt"
        corpus.write_text("a b a b a\n", encoding="utf-8")
        model = train_ngram(corpus, order=2)
        assert model.vocab == [EOS_TOKEN, UNK_TOKEN, "a", "b"]
        a_id, b_id = 2, 3
        logits = model.next_logits([a_id])
        # Context "a": b twice, then <eos> once; V=4, k=1:
        # p(a|a) = 1/7, p(b|a) = 3/7, p(<eos>|a) = 2/7.
        assert logits[a_id] == pytest.approx(math.log(1 / 7), abs=1e-12)
        assert logits[b_id] == pytest.approx(math.log(3 / 7), abs=1e-12)
        assert logits[model.eos_token_id] == pytest.approx(math.log(2 / 7), abs=1e-12)

    def test_lines_do_not_bleed_contexts(self, tmp_path):
        corpus = tmp_path / "c.txt"
        corpus.write_text("a\nb\n", encoding="utf-8")
        model = train_ngram(corpus, order=2)
        # "a" is followed only by <eos>, never by "b".
        logits = model.next_logits([2])
        assert logits[model.eos_token_id] > logits[3]

    def test_vocab_corpora_extend_token_space(self, tmp_path):
        main = tmp_path / "main.txt"
        other = tmp_path / "other.txt"
        main.write_text("a b\n", encoding="utf-8")
        other.write_text("c d\n", encoding="utf-8")
        solo = train_ngram(main, order=2)
        joint = train_ngram(main, order=2, vocab_corpora=[other])
        assert "c" not in solo.vocab
        assert "c" in joint.vocab and "d" in joint.vocab
        # Shared vocab means shared tokenizer fingerprint across corpora.
        joint_other = train_ngram(other, order=2, vocab_corpora=[main])
        assert joint.tokenizer_id == joint_other.tokenizer_id

    def test_char_tokenizer(self, tmp_path):
        corpus = tmp_path / "c.txt"
        corpus.write_text("ab\n", encoding="utf-8")
        model = train_ngram(corpus, order=2, tokenizer="char")
        assert model.encode("ab") == [model._ids["a"], model._ids["b"]]
        assert model.decode_tokens(model.encode("ab")) == "ab"

    def test_empty_corpus_rejected(self, tmp_path):
        corpus = tmp_path / "c.txt"
        corpus.write_text("\n\n", encoding="utf-8")
        with pytest.raises(ParameterError):
            train_ngram(corpus, order=2)

    def test_bad_order_rejected(self, tmp_path):
        corpus = tmp_path / "c.txt"
        corpus.write_text("a b\n", encoding="utf-8")
        with pytest.raises(ParameterError):
            train_ngram(corpus, order=0)
        with pytest.raises(ParameterError):
            train_ngram(corpus, order=9)


class TestSerialization:
    def test_save_load_roundtrip(self, tmp_path):
        corpus = tmp_path / "c.txt"
        corpus.write_text("the cat sat\nthe dog ran\n", encoding="utf-8")
        model = train_ngram(corpus, order=3, smoothing_k=0.5)
        path = tmp_path / "model.ngram"
        save_ngram(model, path)
        loaded = load_ngram(path)
        assert loaded.vocab == model.vocab
        assert loaded.order == model.order
        assert loaded.smoothing_k == model.smoothing_k
        assert loaded.tokenizer_id == model.tokenizer_id
        ctx = [model._ids["the"]]
        assert np.array_equal(loaded.next_logits(ctx), model.next_logits(ctx))

    def test_serialization_is_deterministic(self, tmp_path):
        corpus = tmp_path / "c.txt"
        corpus.write_text("x y z\nz y x\n", encoding="utf-8")
        p1, p2, p3 = (tmp_path / n for n in ("m1", "m2", "m3"))
        save_ngram(train_ngram(corpus, order=2), p1)
        save_ngram(train_ngram(corpus, order=2), p2)
        save_ngram(load_ngram(p1), p3)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_bytes() == p3.read_bytes()

    def test_load_rejects_garbage(self, tmp_path):
        bad = tmp_path / "bad"
        bad.write_text("not a model\n", encoding="utf-8")
        with pytest.raises(ParameterError):
            load_ngram(bad)
        empty = tmp_path / "empty"
        empty.write_text("", encoding="utf-8")
        with pytest.raises(ParameterError):
            load_ngram(empty)

    def test_load_rejects_wrong_version(self, tmp_path):
        bad = tmp_path / "bad"
        bad.write_text(
            '{"format":"detoxkit-ngram","version":99,"order":1,'
            '"smoothing_k":1.0,"tokenizer":"whitespace","vocab":["<eos>","<unk>"]}\n',
            encoding="utf-8",
        )
        with pytest.raises(ParameterError):
            load_ngram(bad)
