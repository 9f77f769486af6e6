import copy

import numpy as np
import pytest

from cascade_transducer.data import TextPair, ToyLanguageSpec, generate_toy_corpus
from cascade_transducer.errors import ConfigError, DimensionError, DivergenceError
from cascade_transducer.models import LanguageModel, LMConfig, ModelConfig, TransducerModel
from cascade_transducer.tensor import Tensor
from cascade_transducer.training import (Adam, TrainConfig, clip_global_norm, finetune_with_correction, lm_perplexity,
                                         run_steps, train_acoustic, train_lm, train_s2c)

from conftest import micro_s2c


def test_clip_examples():
    g = [np.array([1.2, 1.6])]
    assert clip_global_norm(g, 5.0)[0] is g[0]
    assert np.array_equal(clip_global_norm([np.array([3.0, 4.0])], 5.0)[0], [3.0, 4.0])
    np.testing.assert_allclose(clip_global_norm([np.array([6.0, 8.0])], 5.0)[0], [3.0, 4.0])
    raw = [np.array([3.0, -1.0]), np.array([[10.0]])]
    clipped = clip_global_norm(raw, 1.0)
    ratio = clipped[0] / raw[0]
    assert np.all(ratio > 0) and np.allclose(ratio, clipped[1] / raw[1])
    with pytest.raises(ConfigError):
        clip_global_norm(raw, 0.0)


def test_adam_first_step_and_zero_grad():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([p], 3e-4)
    opt.step([np.array([1.0])])
    assert p.data[0] == pytest.approx(1.0 - 3e-4, rel=1e-6)
    before = p.data.copy()
    opt.step([np.zeros(1)])
    assert opt.t == 2
    q = Tensor(np.array([2.0]), requires_grad=True)
    Adam([q]).step([np.zeros(1)])
    assert q.data[0] == 2.0
    with pytest.raises(DimensionError):
        opt.step([np.zeros(2)])


def test_adam_skips_frozen_parameters():
    p = Tensor(np.array([1.0]), requires_grad=False)
    Adam([p]).step()
    assert p.data[0] == 1.0


def test_divergence_raises_with_step():
    m = micro_s2c()

    def loss(step):
        return Tensor(np.array(np.nan if step == 2 else 1.0), requires_grad=True)

    with pytest.raises(DivergenceError) as err:
        run_steps(m, loss, 5, 1e-3, 5.0)
    assert err.value.step == 2


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(augment_p=1.0)


@pytest.fixture(scope="module")
def small():
    return generate_toy_corpus(ToyLanguageSpec(seed=2), 200, 600, seed=2, n_dev=20, n_test=20)


def _s2c(corpus, **kw):
    return TransducerModel(ModelConfig(kind="s2c", output_vocab=len(corpus.char_vocab),
                                       input_vocab=len(corpus.syllable_vocab), embed_dim=16, encoder_hidden=32,
                                       encoder_proj=16, pred_hidden=32, pred_proj=16, joint_dim=16, **kw))


def test_training_is_deterministic(small):
    cfg = TrainConfig(steps=15, learning_rate=1e-3, batch_size=4)
    runs = []
    for _ in range(2):
        m = _s2c(small, conv_kernel=3)
        res = train_s2c(m, small.text, cfg, augment=True, n_syllables=30)
        runs.append((res.losses, [p.data.copy() for p in m.parameters()]))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


@pytest.mark.slow
def test_losses_decrease(small):
    def smooth(x, i):
        return float(np.mean(x[i - 25:i + 25]))

    cfg = TrainConfig(steps=525, learning_rate=1e-3, batch_size=8)
    ac = TransducerModel(ModelConfig(kind="acoustic", output_vocab=len(small.syllable_vocab), input_dim=16,
                                     conv_layers=[{"filters": 16, "stride": 2}], encoder_hidden=32, encoder_proj=16,
                                     pred_hidden=32, pred_proj=16, joint_dim=16, embed_dim=16))
    s2c = _s2c(small)
    lm = LanguageModel(LMConfig(vocab=len(small.char_vocab), embed_dim=16, hidden=32, proj=16))
    curves = [train_acoustic(ac, small.paired, cfg).losses, train_s2c(s2c, small.text, cfg).losses,
              train_lm(lm, [p.characters for p in small.text], cfg).losses]
    for c in curves:
        assert smooth(c, 500) < smooth(c, 50)
    # the LM beats a unigram model on held-out text
    chars = [c for p in small.text for c in p.characters]
    counts = np.bincount(chars + [2] * len(small.text), minlength=len(small.char_vocab)).astype(float)
    probs = counts / counts.sum()
    dev = [u.characters for u in small.dev]
    uni = np.exp(-np.mean([np.log(probs[c]) for s in dev for c in list(s) + [2]]))
    assert lm_perplexity(lm, dev) < uni


def test_finetune_zero_steps_is_noop(small):
    m = _s2c(small)
    before = copy.deepcopy([p.data for p in m.parameters()])
    res = finetune_with_correction(m, small.text, [], TrainConfig(), steps=0)
    assert res.losses == []
    assert all(np.array_equal(a, p.data) for a, p in zip(before, m.parameters()))


def test_finetune_runs_on_mixed_stream(small):
    m = _s2c(small)
    corr = [TextPair(p.syllables[::-1], p.characters, "correction", p.utt_id) for p in small.text[:5]]
    res = finetune_with_correction(m, small.text, corr, TrainConfig(batch_size=8, finetune_steps=3))
    assert len(res.losses) == 3
