import numpy as np
import pytest

from cascade_transducer.checkpoint import (MAGIC, check_vocab, decode_checkpoint, encode_checkpoint, load_model,
                                           read_header, save_model)
from cascade_transducer.errors import DataError, FingerprintError
from cascade_transducer.models import LanguageModel, LMConfig, uniform_lm_head_

from conftest import micro_acoustic, micro_s2c


@pytest.mark.parametrize("make", [lambda: micro_s2c(seed=3, conv_kernel=2, lm_head=True),
                                  lambda: micro_acoustic(seed=4),
                                  lambda: LanguageModel(LMConfig(vocab=7, embed_dim=3, hidden=4))])
def test_round_trip_bit_exact_and_fixed_point(tmp_path, make):
    m = make()
    for p in m.parameters():
        p.data = (p.data + np.random.default_rng(0).normal(size=p.data.shape)).astype(p.data.dtype)
    path = tmp_path / "m.ckpt"
    save_model(m, str(path))
    loaded, header = load_model(str(path))
    for (na, a), (nb, b) in zip(m.named_parameters(), loaded.named_parameters()):
        assert na == nb and a.data.dtype == b.data.dtype and np.array_equal(a.data, b.data)
    assert encode_checkpoint(loaded) == path.read_bytes()


def test_manifest_offsets_consistent():
    header, base = read_header(encode_checkpoint(micro_s2c()))
    end = 0
    for e in header["tensors"]:
        assert e["offset"] == end
        assert e["nbytes"] == int(np.prod(e["shape"])) * 4 and e["dtype"] == "<f4"
        end += e["nbytes"]


def test_frozen_flag_survives(tmp_path):
    m = micro_s2c(lm_head=True)
    uniform_lm_head_(m)
    save_model(m, str(tmp_path / "u.ckpt"))
    loaded, _ = load_model(str(tmp_path / "u.ckpt"))
    assert not loaded.lm_head.weight.requires_grad


def test_corruption_detected():
    data = encode_checkpoint(micro_s2c())
    with pytest.raises(DataError):
        decode_checkpoint(b"XXXXXXXX" + data[8:])
    with pytest.raises(DataError):
        decode_checkpoint(data[:-4])
    # tamper with the config but keep the stored fingerprint
    bad = data.replace(b'"joint_dim": 5', b'"joint_dim": 6')
    assert len(bad) == len(data)
    with pytest.raises(FingerprintError):
        decode_checkpoint(bad)


def test_vocab_check():
    header, _ = read_header(encode_checkpoint(micro_s2c(), vocabs={"output": "abc"}))
    check_vocab(header, "output", "abc")
    with pytest.raises(FingerprintError):
        check_vocab(header, "output", "xyz")
