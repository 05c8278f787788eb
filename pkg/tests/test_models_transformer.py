"""Byte-level transformer backend: tokenizer, forward pass, prefix path."""

from __future__ import annotations

import numpy as np
import pytest

from promptflat.errors import (DimensionMismatch, SequenceTooLong,
                               UnknownLabelToken)
from promptflat.models.transformer import (BYTE_VOCAB, TransformerConfig,
                                           TransformerModel, tensor_spec)
from promptflat.models.weights import load_transformer, save_model
from promptflat.prompts import PromptCandidate, Verbalizer, render_example

CFG = TransformerConfig(layers=1, heads=2, d_model=8, vocab_size=258,
                        max_seq_len=96)


@pytest.fixture(scope="module")
def model(verbalizer):
    return TransformerModel(CFG, verbalizer, seed=7)


# -- configuration ------------------------------------------------------

def test_config_rejects_indivisible_heads():
    with pytest.raises(DimensionMismatch):
        TransformerConfig(heads=3, d_model=8)


def test_config_rejects_vocab_below_byte_range():
    with pytest.raises(DimensionMismatch):
        TransformerConfig(vocab_size=100)


def test_config_rejects_nonpositive_dims():
    with pytest.raises(DimensionMismatch):
        TransformerConfig(layers=0)


def test_no_room_for_reserved_ids(verbalizer):
    # 2 labels need ids 256 and 257; a 256-entry vocab has neither.
    with pytest.raises(UnknownLabelToken):
        TransformerModel(TransformerConfig(vocab_size=BYTE_VOCAB), verbalizer)


# -- tokenizer ----------------------------------------------------------

def test_plain_text_is_raw_bytes(model):
    text = "a quiet film, 7/10"
    ids = model.tokenize(text)
    assert ids.dtype == np.int64
    assert bytes(int(i) for i in ids) == text.encode("utf-8")


def test_verbalizer_tokens_get_reserved_ids(model):
    # sorted labels: negative -> 256, positive -> 257
    assert model.tokenize("bad").tolist() == [256]
    assert model.tokenize("good").tolist() == [257]
    assert model.tokenize("bad good").tolist() == [256, ord(" "), 257]


def test_reserved_id_inside_word(model):
    # greedy scan matches the token string wherever it starts
    assert model.tokenize("badge").tolist() == [256, ord("g"), ord("e")]


def test_overlapping_tokens_longest_wins():
    vb = Verbalizer({"short": "go", "long": "good"})
    m = TransformerModel(CFG, vb, seed=0)
    # sorted labels: long -> 256, short -> 257
    assert m.tokenize("good").tolist() == [256]
    assert m.tokenize("got").tolist() == [257, ord("t")]


def test_encode_matches_rendered_template(model, verbalizer,
                                          three_demo_prompt):
    enc = model.encode(three_demo_prompt, ["new film"])
    rendered = render_example(three_demo_prompt, verbalizer, "new film")
    assert enc[0].tolist() == model.tokenize(rendered).tolist()


def test_encode_too_long_raises(model):
    with pytest.raises(SequenceTooLong):
        model.encode(None, ["x" * (CFG.max_seq_len + 1)])


# -- parameters ---------------------------------------------------------

def test_param_count_matches_spec(model):
    total = sum(int(np.prod(shape)) for _, shape in tensor_spec(CFG))
    assert model.param_count == total
    assert model.get_params().shape == (total,)


def test_init_is_seeded(verbalizer):
    a = TransformerModel(CFG, verbalizer, seed=3).get_params()
    b = TransformerModel(CFG, verbalizer, seed=3).get_params()
    c = TransformerModel(CFG, verbalizer, seed=4).get_params()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_init_norm_gains_one_biases_zero(model):
    t = model.tensors()
    assert np.all(t["block0.ln1.g"] == 1.0)
    assert np.all(t["ln_f.g"] == 1.0)
    assert np.all(t["block0.attn.bqkv"] == 0.0)
    assert np.all(t["ln_f.b"] == 0.0)


def test_set_params_round_trip(verbalizer):
    m = TransformerModel(CFG, verbalizer, seed=1)
    w = m.get_params()
    w2 = w + 0.5
    m.set_params(w2)
    assert np.array_equal(m.get_params(), w2.astype(np.float32))


def test_set_params_validation(model):
    with pytest.raises(DimensionMismatch):
        model.set_params(np.zeros(3))
    bad = np.zeros(model.param_count)
    bad[0] = np.nan
    with pytest.raises(DimensionMismatch):
        model.set_params(bad)


# -- forward pass -------------------------------------------------------

def test_probs_rows_sum_to_one(model, three_demo_prompt, toy_inputs):
    enc = model.encode(three_demo_prompt, toy_inputs.texts)
    p = model.probs(enc)
    assert p.shape == (len(toy_inputs), 2)
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_probs_deterministic(model, three_demo_prompt, toy_inputs):
    enc = model.encode(three_demo_prompt, toy_inputs.texts)
    assert np.array_equal(model.probs(enc), model.probs(enc))


def test_probs_param_arg_matches_set_params(verbalizer, three_demo_prompt,
                                            toy_inputs):
    m = TransformerModel(CFG, verbalizer, seed=5)
    enc = m.encode(three_demo_prompt, toy_inputs.texts)
    shift = m.get_params() + np.float32(0.01)
    via_arg = m.probs(enc, params=shift)
    m.set_params(shift)
    np.testing.assert_array_equal(via_arg, m.probs(enc))


def test_prompt_changes_probs(model, toy_inputs):
    bare = model.probs(model.encode(None, toy_inputs.texts))
    prompt = PromptCandidate("p", "Classify.", (("fun", "positive"),))
    cond = model.probs(model.encode(prompt, toy_inputs.texts))
    assert not np.array_equal(bare, cond)


# -- prefix conditioning ------------------------------------------------

def test_prefix_feature_dim_is_d_model(model):
    assert model.prefix_feature_dim == CFG.d_model


def test_prefix_changes_probs(model, toy_inputs):
    enc = model.encode(None, toy_inputs.texts)
    base = model.probs(enc)
    prefix = np.full((2, CFG.d_model), 0.3)
    out = model.probs_with_prefix(enc, prefix)
    assert out.shape == base.shape
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert not np.array_equal(base, out)


def test_zero_length_prefix_is_identity(model, toy_inputs):
    enc = model.encode(None, toy_inputs.texts)
    out = model.probs_with_prefix(enc, np.zeros((0, CFG.d_model)))
    np.testing.assert_array_equal(out, model.probs(enc))


def test_prefix_overflow_raises(model):
    enc = model.encode(None, ["x" * (CFG.max_seq_len - 2)])
    with pytest.raises(SequenceTooLong):
        model.probs_with_prefix(enc, np.zeros((5, CFG.d_model)))


# -- weight files -------------------------------------------------------

def test_save_load_round_trip(tmp_path, verbalizer, toy_inputs):
    m = TransformerModel(CFG, verbalizer, seed=11)
    path = str(tmp_path / "t.pflt")
    save_model(m, path)
    m2 = load_transformer(path, CFG)
    assert np.array_equal(m.get_params(), m2.get_params())
    assert m2.verbalizer.entries == verbalizer.entries
    enc = m.encode(None, toy_inputs.texts)
    np.testing.assert_array_equal(m.probs(enc), m2.probs(enc))


def test_save_is_byte_stable(tmp_path, verbalizer):
    m = TransformerModel(CFG, verbalizer, seed=11)
    p1, p2 = str(tmp_path / "a.pflt"), str(tmp_path / "b.pflt")
    save_model(m, p1)
    save_model(load_transformer(p1, CFG), p2)
    with open(p1, "rb") as fa, open(p2, "rb") as fb:
        assert fa.read() == fb.read()
