import numpy as np
import pytest

from cascade_transducer.models import ConvLayerConfig, ModelConfig, TransducerModel
from cascade_transducer.tensor import precision


def micro_s2c(seed=0, conv_kernel=0, lm_head=False, vocab=6, input_vocab=7, scale=1.0, dtype="float32"):
    cfg = ModelConfig(kind="s2c", output_vocab=vocab, input_vocab=input_vocab, embed_dim=4, conv_kernel=conv_kernel,
                      conv_filters=5, encoder_hidden=6, encoder_proj=4, pred_hidden=6, pred_proj=4, joint_dim=5,
                      lm_head=lm_head, seed=seed, dtype=dtype)
    m = TransducerModel(cfg)
    if scale != 1.0:
        for p in m.parameters():
            p.data = (p.data * scale).astype(p.data.dtype)
    return m


def micro_acoustic(seed=0, vocab=6, input_dim=3, scale=1.0, dtype="float32"):
    cfg = ModelConfig(kind="acoustic", output_vocab=vocab, input_dim=input_dim,
                      conv_layers=[ConvLayerConfig(4, 3, 2, 1), ConvLayerConfig(4, 3, 1, 2)],
                      encoder_hidden=6, encoder_proj=4, pred_hidden=6, pred_proj=4, embed_dim=4, joint_dim=5,
                      seed=seed, dtype=dtype)
    m = TransducerModel(cfg)
    if scale != 1.0:
        for p in m.parameters():
            p.data = (p.data * scale).astype(p.data.dtype)
    return m


@pytest.fixture
def f64():
    with precision("float64"):
        yield


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for ac in sorted(results, key=lambda k: int(k.split("-")[1])):
        ok, detail = results[ac]
        terminalreporter.write_line(f"{ac} {'PASS' if ok else 'FAIL'}: {detail}")
