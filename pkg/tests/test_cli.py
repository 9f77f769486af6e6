import json

import pytest

from cascade_transducer.cli import main

TINY = """
seed: 0
n_paired: 24
n_text_only: 40
n_dev: 4
n_test: 4
acoustic: {encoder_hidden: 8, encoder_proj: 4, pred_hidden: 8, pred_proj: 4, joint_dim: 8, embed_dim: 4,
           conv_layers: [{filters: 4, stride: 2}]}
baseline: {encoder_hidden: 8, encoder_proj: 4, pred_hidden: 8, pred_proj: 4, joint_dim: 8, embed_dim: 4,
           conv_layers: [{filters: 4, stride: 2}]}
s2c: {encoder_hidden: 8, encoder_proj: 4, pred_hidden: 8, pred_proj: 4, joint_dim: 8, embed_dim: 4, conv_filters: 4}
lm: {embed_dim: 4, hidden: 8, proj: null}
train: {steps: 3, batch_size: 4, finetune_steps: 2}
s2c_steps: 3
lm_steps: 3
beam: {beam_size: 2}
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(TINY)
    data = root / "data"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    return root, cfg, data


def test_gen_data_deterministic(workspace, tmp_path):
    root, cfg, data = workspace
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    for name in ("syllables.vocab", "characters.vocab", "paired.tsv", "text.tsv", "test_novel.tsv", "features.f32",
                 "report.json"):
        assert (data / name).read_bytes() == (tmp_path / "again" / name).read_bytes()
    report = json.loads((data / "report.json").read_text())
    assert report["novel_fraction_novel"] >= 0.3
    lines = (data / "characters.vocab").read_text().splitlines()
    assert lines[:4] == ["<blank>", "<s>", "</s>", "<unk>"]
    rec = (data / "paired.tsv").read_text().splitlines()[0].split("\t")
    assert len(rec) == 4 and len(rec[1].split()) == len(rec[2].split())


def test_train_decode_eval(workspace, capsys):
    root, cfg, data = workspace
    c = ["--config", str(cfg), "--data", str(data)]
    for kind, extra in (("acoustic", []), ("character-baseline", []), ("lm", []),
                        ("s2c", ["--conv", "--augment", "--self-fusion"])):
        assert main(["train", kind, *c, "--out", str(root / f"{kind}.ckpt"), *extra]) == 0
        assert (root / f"{kind}.ckpt.loss.tsv").read_text().count("\n") == 3
    assert main(["finetune-correction", "--acoustic", str(root / "acoustic.ckpt"), "--s2c", str(root / "s2c.ckpt"),
                 *c, "--out", str(root / "e4.ckpt")]) == 0
    outs = {}
    for mode, models in (("baseline", ["--model", str(root / "character-baseline.ckpt")]),
                         ("baseline+lm", ["--model", str(root / "character-baseline.ckpt"),
                                          "--lm", str(root / "lm.ckpt"), "--lambda", "0"]),
                         ("cascade", ["--acoustic", str(root / "acoustic.ckpt"), "--s2c", str(root / "e4.ckpt")])):
        out = root / f"{mode}.txt"
        assert main(["decode", mode, *c, *models, "--out", str(out), "--nbest", "2"]) == 0
        outs[mode] = out.read_text()
        assert len(outs[mode].splitlines()) == 4
        assert main(["eval", "--ref", str(data / "test_novel.tsv"), "--hyp", str(out),
                     "--out", str(root / f"{mode}.json")]) == 0
    assert [l.split("\t")[:2] for l in outs["baseline"].splitlines()] == \
        [l.split("\t")[:2] for l in outs["baseline+lm"].splitlines()]
    # rerun determinism
    again = root / "again.txt"
    main(["decode", "cascade", *c, "--acoustic", str(root / "acoustic.ckpt"), "--s2c", str(root / "e4.ckpt"),
          "--out", str(again)])
    assert again.read_text() == outs["cascade"]
    capsys.readouterr()
    assert main(["eval", "--ref", str(data / "test_novel.tsv"), "--hyp", str(data / "test_novel.tsv")]) == 0
    assert "0.00 (0.00/0.00/0.00)" in capsys.readouterr().out


def test_exit_codes(workspace, tmp_path):
    root, cfg, data = workspace
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_key: 1\n")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["train", "acoustic", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "m")]) == 3
    assert main(["train", "acoustic", "--config", str(cfg), "--data", str(data), "--conv",
                 "--out", str(tmp_path / "m")]) == 2
    broken = tmp_path / "hyp.txt"
    broken.write_text("only-one-field\n")
    assert main(["eval", "--ref", str(data / "test_novel.tsv"), "--hyp", str(broken)]) == 3


def test_vocab_mismatch_is_fingerprint_error(workspace, tmp_path):
    root, cfg, data = workspace
    other = tmp_path / "other"
    assert main(["gen-data", "--config", str(cfg), "--seed", "5", "--out", str(other)]) == 0
    if (other / "characters.vocab").read_text() == (data / "characters.vocab").read_text():
        pytest.skip("seeds produced the same vocabulary")
    ckpt = root / "character-baseline.ckpt"
    if not ckpt.exists():
        assert main(["train", "character-baseline", "--config", str(cfg), "--data", str(data),
                     "--out", str(ckpt)]) == 0
    assert main(["decode", "baseline", "--config", str(cfg), "--data", str(other), "--model", str(ckpt)]) == 3


def test_experiment_reproducible(workspace, tmp_path, capsys):
    root, cfg, data = workspace
    texts = []
    for run in ("a", "b"):
        assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / run)]) == 0
        texts.append((tmp_path / run / "ladder.txt").read_bytes())
    assert texts[0] == texts[1]
    rows = [l for l in texts[0].decode().splitlines() if l[:2] in ("B0", "B1", "B2") or l[:1] == "E"]
    assert [r.split()[0] for r in rows] == ["B0", "B1", "B2", "E0", "E1", "E2", "E3", "E4"]
    for name in ("acoustic", "baseline", "lm", "E0", "E4"):
        assert (tmp_path / "a" / f"{name}.ckpt").exists()
