import math
import string

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_batch, tiny_config
from tinyintent import kernels as K
from tinyintent.errors import ConfigError, InputError
from tinyintent.gradcheck import model_gradient_errors
from tinyintent.network import (ModelConfig, ModelParameters, backward, char_features, encode_sentence,
                                forward, init_parameters, logits_batch, parameter_count,
                                parameter_shapes, predict_ids, word_representation)
from tinyintent.text import PAD_ID, EncodedUtterance, Vocabulary, encode_utterance


def random_params(cfg, seed, scale=0.5, dtype=np.float64):
    params = init_parameters(cfg, seed, dtype=dtype)
    rng = np.random.default_rng(seed + 1000)
    for t in params.values():
        t.values[...] = rng.normal(0, scale, t.shape)
    return params


def char_row(word, vocab, width):
    row = np.zeros(width, dtype=np.int32)
    ids = [vocab.lookup(c) for c in word[:width]]
    row[:len(ids)] = ids
    return row


# --- config / parameter count --------------------------------------------

def test_default_widths():
    cfg = ModelConfig()
    assert cfg.char_feature_dim == 60
    assert cfg.lstm_input_dim == 110


def test_atis_parameter_count():
    cfg = ModelConfig(num_labels=21, word_vocab_size=724, char_vocab_size=70)
    assert parameter_count(cfg) == 166_287
    assert init_parameters(cfg, 0).count() == 166_287


@settings(max_examples=40)
@given(st.integers(2, 50), st.integers(2, 30), st.integers(1, 9), st.integers(1, 20),
       st.lists(st.tuples(st.integers(1, 6), st.integers(1, 8)), min_size=1, max_size=4))
def test_parameter_count_matches_enumeration(vw, vc, labels, hidden, convs):
    cfg = ModelConfig(word_emb_dim=3, char_emb_dim=2, conv_kernel_sizes=[k for k, _ in convs],
                      conv_filter_counts=[f for _, f in convs], lstm_hidden=hidden, max_word_len=6,
                      num_labels=labels, word_vocab_size=vw, char_vocab_size=vc)
    assert parameter_count(cfg) == sum(math.prod(s) for s in parameter_shapes(cfg).values())


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(max_word_len=4).validate()
    with pytest.raises(ConfigError):
        ModelConfig(conv_kernel_sizes=(3, 4), conv_filter_counts=(1,)).validate()
    with pytest.raises(ConfigError):
        ModelConfig(conv_activation="tanh").validate()
    with pytest.raises(ConfigError):
        ModelConfig(lstm_hidden=0).validate()


def test_parameters_reject_wrong_shapes():
    cfg = tiny_config()
    arrays = init_parameters(cfg, 0).arrays()
    arrays["dense.b"] = np.zeros(7)
    with pytest.raises(ConfigError):
        ModelParameters.from_arrays(cfg, arrays)


# --- init ------------------------------------------------------------------

def test_init_is_deterministic():
    cfg = tiny_config()
    a, b, c = init_parameters(cfg, 5), init_parameters(cfg, 5), init_parameters(cfg, 6)
    for name in a:
        assert a[name].values.tobytes() == b[name].values.tobytes()
    assert any(a[n].values.tobytes() != c[n].values.tobytes() for n in a)


def test_init_scheme():
    cfg = ModelConfig(num_labels=5, word_vocab_size=300, char_vocab_size=40)
    p = init_parameters(cfg, 0)
    H = cfg.lstm_hidden
    assert np.abs(p["char_emb"].values).max() <= 0.05
    assert np.abs(p["word_emb"].values).max() <= 0.05
    b = p["lstm.b"].values
    assert np.all(b[H:2 * H] == 1.0) and np.all(b[:H] == 0) and np.all(b[2 * H:] == 0)
    bound = math.sqrt(6 / (cfg.lstm_input_dim + 4 * H))
    assert np.abs(p["lstm.W_x"].values).max() <= bound
    assert p.dtype == np.float32


def test_pretrained_rows_are_copied_exactly():
    cfg = tiny_config()
    vec = np.linspace(-1, 1, cfg.word_emb_dim).astype(np.float32)
    p = init_parameters(cfg, 0, pretrained_rows={3: vec})
    assert p["word_emb"].values[3].tobytes() == vec.tobytes()
    with pytest.raises(ConfigError):
        init_parameters(cfg, 0, pretrained_rows={3: np.zeros(2)})


# --- char features / word representation ---------------------------------

def test_char_feature_width_small_config():
    cfg = ModelConfig(char_emb_dim=5, conv_kernel_sizes=(3, 5, 7), conv_filter_counts=(4, 2, 3),
                      max_word_len=9, word_vocab_size=4, char_vocab_size=30)
    p = init_parameters(cfg, 0)
    assert char_features(np.arange(1, 10), p).shape == (9,)


def test_char_feature_width_default():
    p = init_parameters(ModelConfig(word_vocab_size=4, char_vocab_size=30), 0)
    feats = char_features(np.zeros(20, dtype=np.int32), p)
    assert feats.shape == (60,)
    assert np.all(feats >= 0)  # relu before pooling


def test_equal_after_truncation_gives_equal_features():
    chars = Vocabulary(string.ascii_lowercase)
    p = init_parameters(ModelConfig(word_vocab_size=4, char_vocab_size=len(chars)), 0)
    a = char_row("internationalization", chars, 20)
    b = char_row("internationalizations", chars, 20)
    np.testing.assert_array_equal(char_features(a, p), char_features(b, p))


def test_word_representation_layout():
    chars = Vocabulary(string.ascii_lowercase)
    p = init_parameters(ModelConfig(word_vocab_size=6, char_vocab_size=len(chars)), 0)
    row = char_row("boston", chars, 20)
    a, b = word_representation(2, row, p), word_representation(3, row, p)
    assert a.shape == (110,)
    np.testing.assert_array_equal(a[:50], p["word_emb"].values[2])
    np.testing.assert_array_equal(a[50:], b[50:])
    assert not np.array_equal(a[:50], b[:50])
    pad = word_representation(PAD_ID, np.zeros(20, dtype=np.int32), p)
    np.testing.assert_array_equal(pad[:50], p["word_emb"].values[PAD_ID])


def test_shared_prefix_similarity():
    chars = Vocabulary(string.ascii_lowercase)
    cfg = ModelConfig(word_vocab_size=2, char_vocab_size=len(chars))

    def cos(a, b):
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    wins = 0
    for seed in range(100):
        p = init_parameters(cfg, seed)
        base, near, far = (char_features(char_row(w, chars, 20), p)
                           for w in ("petrify", "petrifies", "cabloxs"))
        wins += cos(base, near) > cos(base, far)
    assert wins >= 90


# --- encode_sentence / forward -------------------------------------------

def make_utt(cfg, rng, length):
    w = np.zeros(cfg.max_seq_len, dtype=np.int32)
    c = np.zeros((cfg.max_seq_len, cfg.max_word_len), dtype=np.int32)
    w[:length] = rng.integers(1, cfg.word_vocab_size, size=length)
    c[:length, :3] = rng.integers(1, cfg.char_vocab_size, size=(length, 3))
    return EncodedUtterance(w, c, length)


def test_zero_lstm_weights_give_zero_sentence_vector():
    cfg = tiny_config()
    p = random_params(cfg, 0)
    for name in ("lstm.W_x", "lstm.W_h", "lstm.b"):
        p[name].values[...] = 0
    vec = encode_sentence(make_utt(cfg, np.random.default_rng(0), 4), p)
    assert np.all(vec == 0)


def test_single_token_is_one_cell_step():
    cfg = tiny_config()
    p = random_params(cfg, 1)
    utt = make_utt(cfg, np.random.default_rng(1), 1)
    x = word_representation(int(utt.word_ids[0]), utt.char_ids[0], p)
    H = cfg.lstm_hidden
    h, _, _ = K.lstm_cell(x, np.zeros(H), np.zeros(H), p["lstm.W_x"].values, p["lstm.W_h"].values,
                          p["lstm.b"].values)
    np.testing.assert_allclose(encode_sentence(utt, p), h, rtol=1e-12, atol=1e-14)


def test_zero_true_length_is_input_error():
    cfg = tiny_config()
    p = random_params(cfg, 0)
    utt = make_utt(cfg, np.random.default_rng(0), 2)
    utt.true_length = 0
    with pytest.raises(InputError):
        encode_sentence(utt, p)


def test_padding_invariance_bit_identical():
    words = Vocabulary(["show", "flights", "to", "boston"])
    chars = Vocabulary(string.ascii_lowercase)
    short = ModelConfig(max_seq_len=6, num_labels=4, word_vocab_size=len(words), char_vocab_size=len(chars))
    long = ModelConfig(max_seq_len=25, num_labels=4, word_vocab_size=len(words), char_vocab_size=len(chars))
    p_short = init_parameters(short, 3)
    p_long = ModelParameters.from_arrays(long, p_short.arrays())
    text = "show flights to boston"
    a = forward(encode_utterance(text, words, chars, short.pipeline), p_short)
    b = forward(encode_utterance(text, words, chars, long.pipeline), p_long)
    assert a.probabilities.tobytes() == b.probabilities.tobytes()
    assert a.label_id == b.label_id


def test_batch_padding_does_not_leak_between_rows():
    cfg = tiny_config()
    p = random_params(cfg, 2)
    rng = np.random.default_rng(2)
    w, c, lengths, _ = random_batch(cfg, 6, rng)
    batched = logits_batch(w, c, lengths, p)
    for i in range(6):
        n = lengths[i]
        single = logits_batch(w[i:i + 1, :n], c[i:i + 1, :n], lengths[i:i + 1], p)
        np.testing.assert_allclose(batched[i], single[0], rtol=1e-12, atol=1e-13)


def test_zero_head_gives_uniform_and_label_zero():
    cfg = tiny_config(num_labels=4)
    p = random_params(cfg, 0)
    p["dense.W"].values[...] = 0
    p["dense.b"].values[...] = 0
    pred = forward(make_utt(cfg, np.random.default_rng(0), 3), p)
    np.testing.assert_allclose(pred.probabilities, 0.25, atol=1e-12)
    assert pred.label_id == 0


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.floats(-20, 20))
def test_forward_probabilities_and_bias_shift(seed, shift):
    cfg = tiny_config()
    p = random_params(cfg, seed)
    utt = make_utt(cfg, np.random.default_rng(seed), 1 + seed % cfg.max_seq_len)
    labels = Vocabulary(["a", "b", "c"], reserved=False)
    pred = forward(utt, p, labels)
    assert abs(pred.probabilities.sum() - 1) <= 1e-6
    assert pred.label_id == int(np.argmax(pred.probabilities))
    assert pred.label_name == labels.id_to_token[pred.label_id]
    p["dense.b"].values += shift
    shifted = forward(utt, p)
    assert shifted.label_id == pred.label_id
    np.testing.assert_allclose(shifted.probabilities, pred.probabilities, atol=1e-9)


def test_forward_is_deterministic():
    cfg = tiny_config()
    p = random_params(cfg, 4, dtype=np.float32)
    utt = make_utt(cfg, np.random.default_rng(4), 5)
    assert forward(utt, p).probabilities.tobytes() == forward(utt, p).probabilities.tobytes()


# --- backward ---------------------------------------------------------------

def test_loss_matches_forward_cross_entropy():
    cfg = tiny_config()
    p = random_params(cfg, 5)
    utt = make_utt(cfg, np.random.default_rng(5), 3)
    loss = backward(utt, 2, p)
    assert loss == pytest.approx(K.cross_entropy(forward(utt, p).probabilities, 2), rel=1e-12)


def test_only_touched_embedding_rows_get_gradient():
    cfg = tiny_config(word_vocab_size=10, char_vocab_size=8)
    p = random_params(cfg, 6)
    utt = make_utt(cfg, np.random.default_rng(6), 3)
    backward(utt, 1, p)
    used_words = set(utt.word_ids[:3].tolist())
    used_chars = set(utt.char_ids[:3].ravel().tolist())
    for i in range(cfg.word_vocab_size):
        assert np.any(p["word_emb"].grad[i] != 0) == (i in used_words)
    assert np.all(p["word_emb"].grad[PAD_ID] == 0)
    for i in range(cfg.char_vocab_size):
        if i not in used_chars:
            assert np.all(p["char_emb"].grad[i] == 0)
    for name, t in p.items():
        if name not in ("word_emb", "char_emb"):
            assert np.any(t.grad != 0), name


def test_backward_resets_previous_gradients():
    cfg = tiny_config()
    p = random_params(cfg, 7)
    utt = make_utt(cfg, np.random.default_rng(7), 2)
    backward(utt, 0, p)
    first = {n: t.grad.copy() for n, t in p.items()}
    backward(utt, 0, p)
    for n, t in p.items():
        np.testing.assert_array_equal(t.grad, first[n])


@pytest.mark.parametrize("seed", range(3))
def test_full_model_gradient_check(seed):
    cfg = tiny_config(word_vocab_size=10, char_vocab_size=10)
    p = random_params(cfg, seed)
    w, c, lengths, labels = random_batch(cfg, 3, np.random.default_rng(seed))
    errors = model_gradient_errors(p, w, c, lengths, labels)
    assert set(errors) == set(parameter_shapes(cfg))
    assert max(errors.values()) <= 1e-4, errors


def test_predict_ids_matches_forward(small_prepared, small_params):
    ids = predict_ids(small_prepared.test, small_params, batch_size=7)
    split = small_prepared.test
    for i in range(0, len(split), 9):
        utt = EncodedUtterance(split.word_ids[i], split.char_ids[i], int(split.lengths[i]))
        assert forward(utt, small_params).label_id == ids[i]
