import pytest

from cascade_transducer.config import config_from_dict, load_config
from cascade_transducer.errors import ConfigError


def test_defaults():
    cfg = config_from_dict({})
    assert cfg.train.clip_norm == 5.0 and cfg.train.mix_ratio == 7 and cfg.train.finetune_lr == 1e-4
    assert cfg.beam.beam_size == 5 and cfg.beam.lambda_ == 0.35
    assert cfg.train.augment_p == 0.05


@pytest.mark.parametrize("raw", [{"bogus": 1}, {"train": {"lr": 1}}, {"beam": {"width": 3}},
                                 {"s2c": {"hidden": 3}}, {"language": {"n_syllables": 1}}, {"n_paired": 0},
                                 {"beam": {"lambda": -1}}, {"data_dir": "/nonexistent/dir"}])
def test_rejections(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_yaml_and_seed_override(tmp_path, monkeypatch):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 3\nbeam:\n  lambda: 0.5\ntrain:\n  steps: 7\n")
    cfg = load_config(str(path))
    assert cfg.seed == 3 and cfg.beam.lambda_ == 0.5 and cfg.train.steps == 7 and cfg.train.learning_rate == 1e-3
    monkeypatch.setenv("CASCADE_SEED", "11")
    assert load_config(str(path)).seed == 11
    assert load_config(str(path), seed=2).seed == 2
    monkeypatch.setenv("CASCADE_SEED", "x")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_bad_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(str(path))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))


def test_fingerprint_stable():
    assert config_from_dict({"seed": 1}).fingerprint() == config_from_dict({"seed": 1}).fingerprint()
    assert config_from_dict({"seed": 1}).fingerprint() != config_from_dict({"seed": 2}).fingerprint()
