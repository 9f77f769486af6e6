import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascade_transducer.data import pad_batch
from cascade_transducer.errors import CapabilityError, ConfigError, DimensionError, ModelKindError, VocabularyError
from cascade_transducer.models import (SOS, LanguageModel, LMConfig, ModelConfig, TransducerModel, model_loss,
                                       uniform_lm_head_)
from cascade_transducer.rnnt import LogitLattice, rnnt_loss
from cascade_transducer.tensor import max_relative_error, numeric_gradient

from conftest import micro_acoustic, micro_s2c


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(4, 6), min_size=0, max_size=12), st.sampled_from([0, 2, 3]))
def test_s2c_encoder_keeps_length_and_streams_bit_exactly(ids, kernel):
    m = micro_s2c(conv_kernel=kernel)
    h = m.encode(ids)
    assert h.shape[0] == len(ids)
    enc = m.streaming_encoder()
    for t, tok in enumerate(ids):
        assert np.array_equal(enc.push(tok), h[t])


def test_incremental_prediction_and_joint_are_bit_exact():
    m = micro_s2c(seed=1)
    tokens = [3, 5, 1, 4]
    unrolled = m.prediction_outputs(tokens)
    state = m.initial_state()
    h, state = m.predict(SOS, state)
    steps = [h]
    for tok in tokens:
        h, state = m.predict(tok, state)
        steps.append(h)
    assert np.array_equal(np.stack(steps), unrolled)
    h_enc = m.encode([4, 5, 6])
    lat = m.lattice(h_enc, unrolled)
    for t in range(3):
        for u in range(5):
            assert np.array_equal(m.joint(h_enc[t], unrolled[u]), lat[t, u])


def test_acoustic_encoder_length_follows_strides():
    m = micro_acoustic()
    for T in (1, 2, 5, 8):
        assert m.encode(np.zeros((T, 3), np.float32)).shape[0] == -(-T // 2) == m.encoder_length(T)


def test_kind_and_shape_errors():
    s2c, ac = micro_s2c(), micro_acoustic()
    with pytest.raises(ModelKindError):
        s2c.encode(np.zeros((3, 3), np.float32))
    with pytest.raises(ModelKindError):
        ac.encode([1, 2, 3])
    with pytest.raises(DimensionError):
        ac.encode(np.zeros((3, 4), np.float32))
    with pytest.raises(VocabularyError):
        s2c.encode([9])
    with pytest.raises(VocabularyError):
        s2c.predict(6, s2c.initial_state())
    with pytest.raises(DimensionError):
        s2c.joint(np.zeros(3), np.zeros(4))
    with pytest.raises(CapabilityError):
        s2c.lm_head_logprobs(np.zeros(4))
    with pytest.raises(ConfigError):
        ModelConfig(kind="video", output_vocab=4)


def test_batched_loss_equals_mean_of_single_losses():
    m = micro_s2c(seed=2, dtype="float64")
    xs = [[4, 5, 6, 4], [5, 6]]
    ys = [[1, 2, 3], [4]]
    batched = model_loss(m, pad_batch(xs, ys)).item()
    single = [model_loss(m, pad_batch([x], [y])).item() for x, y in zip(xs, ys)]
    assert batched == pytest.approx(np.mean(single), abs=1e-10)
    # and the single loss agrees with the inference-path lattice
    h = m.encode(xs[0])
    lat = m.lattice(h, m.prediction_outputs(ys[0]))
    assert single[0] == pytest.approx(rnnt_loss(LogitLattice(lat, ys[0]))[0], abs=1e-10)


def test_model_loss_gradients():
    m = micro_s2c(seed=3, conv_kernel=2, lm_head=True, dtype="float64")
    batch = pad_batch([[4, 5, 6], [6, 5]], [[1, 5], [2, 3, 4]])
    m.zero_grad()
    model_loss(m, batch).backward()
    for name, p in m.named_parameters():
        num = numeric_gradient(lambda: model_loss(m, batch).item(), p.data, 1e-6)
        assert max_relative_error(p.grad, num) < 1e-3, name


def test_uniform_head_adds_log_vocab():
    m = micro_s2c(seed=4, lm_head=True, dtype="float64")
    uniform_lm_head_(m)
    parts = {}
    batch = pad_batch([[4, 5, 6], [6]], [[1, 2], [3, 3, 5]])
    total = model_loss(m, batch, parts).item()
    assert total - parts["rnnt"] == pytest.approx(math.log(m.vocab_size - 1), abs=1e-9)
    assert all(not p.requires_grad for p in m.lm_head.parameters())


def test_language_model_sequence_logprob_matches_batch():
    lm = LanguageModel(LMConfig(vocab=6, embed_dim=3, hidden=5, proj=None, dtype="float64"))
    tokens = [4, 2, 5]
    lp = lm.logprobs_batch(np.array([tokens])).data[0]
    expected = sum(lp[i, t - 1] for i, t in enumerate(tokens)) + lp[3, 1]
    assert lm.sequence_logprob(tokens) == pytest.approx(expected, abs=1e-10)
