"""The baseline-versus-cascade ladder at toy scale.

Rows:
  B0  character transducer, greedy
  B1  + beam search
  B2  + external LM shallow fusion
  E0  syllable transducer -> syllable-to-character transducer
  E1  + causal convolution in the converter
  E2  + text augmentation
  E3  + self shallow fusion
  E4  + syllable correction finetuning
"""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig
from .data import RESERVED, Corpus, TextPair, build_correction_set, generate_toy_corpus
from .decode import BeamConfig, beam_search, greedy_decode
from .errors import CascadeError
from .metrics import CorpusReport, corpus_report
from .models import LanguageModel, LMConfig, ModelConfig, TransducerModel
from .training import (evaluate_transducer, finetune_with_correction, train_acoustic, train_character_baseline,
                       train_lm, train_s2c)

log = logging.getLogger(__name__)

LADDER = [
    ("B0", "Character RNN-T (greedy)"),
    ("B1", "+ Beam search"),
    ("B2", "+ Shallow fusion (external LM)"),
    ("E0", "Syllable RNN-T + S2C"),
    ("E1", "+ Conv layer"),
    ("E2", "+ Text augmentation"),
    ("E3", "+ Self shallow fusion"),
    ("E4", "+ Syllable correction"),
]


class StageError(CascadeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class LadderRow:
    key: str
    label: str
    matched: CorpusReport
    novel: CorpusReport


@dataclass
class LadderReport:
    seed: int
    rows: list
    extras: dict = field(default_factory=dict)

    def row(self, key: str) -> LadderRow:
        for r in self.rows:
            if r.key == key:
                return r
        raise KeyError(key)

    def cer(self, key: str, split: str = "novel") -> float:
        return getattr(self.row(key), split).error_rate

    def render(self) -> str:
        lines = [f"seed {self.seed}", f"{'row':<4} {'system':<32} {'matched CER (D/I/S)':<26} novel-bigram CER (D/I/S)"]
        for r in self.rows:
            lines.append(f"{r.key:<4} {r.label:<32} {r.matched.format():<26} {r.novel.format()}")
        for k in sorted(self.extras):
            lines.append(f"# {k}: {self.extras[k]}")
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        return {"seed": self.seed, "extras": self.extras,
                "rows": [{"key": r.key, "label": r.label, "matched": r.matched.to_record(),
                          "novel": r.novel.to_record()} for r in self.rows]}


def model_configs(cfg: ExperimentConfig, corpus: Corpus) -> dict:
    sv, cv = len(corpus.syllable_vocab), len(corpus.char_vocab)
    fdim = cfg.language.feature_dim
    base = cfg.seed * 1000
    acoustic = ModelConfig(kind="acoustic", output_vocab=sv, input_dim=fdim, seed=base + 1, **cfg.acoustic)
    baseline = ModelConfig(kind="acoustic", output_vocab=cv, input_dim=fdim, seed=base + 2, **cfg.baseline)
    s2c = {}
    for key, conv, head in (("E0", 0, False), ("E1", cfg.s2c_conv_kernel, False), ("E2", cfg.s2c_conv_kernel, False),
                            ("E3", cfg.s2c_conv_kernel, True)):
        opts = dict(cfg.s2c)
        opts.setdefault("conv_kernel", conv)
        if conv == 0:
            opts["conv_kernel"] = 0
        s2c[key] = ModelConfig(kind="s2c", output_vocab=cv, input_vocab=sv, lm_head=head, seed=base + 3, **opts)
    lm = LMConfig(vocab=cv, seed=base + 4, **cfg.lm)
    return {"acoustic": acoustic, "baseline": baseline, "s2c": s2c, "lm": lm}


def corpus_for(cfg: ExperimentConfig) -> Corpus:
    spec = dataclasses.replace(cfg.language, seed=cfg.language.seed + cfg.seed)
    return generate_toy_corpus(spec, cfg.n_paired, cfg.n_text_only, cfg.seed, cfg.n_dev, cfg.n_test)


def _decode_report(utts, fn: Callable) -> CorpusReport:
    return corpus_report((u.characters, fn(u)) for u in utts)


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None, corpus: Optional[Corpus] = None,
                   progress: Optional[Callable[[str], None]] = None) -> LadderReport:
    """Train every stage, decode both test splits, and collect the ladder."""
    say = progress or (lambda msg: log.info(msg))
    clock = time.perf_counter()
    stage = "data"

    def mark(name):
        nonlocal stage, clock
        now = time.perf_counter()
        say(f"{stage} done in {now - clock:.1f}s")
        stage, clock = name, now

    try:
        corpus = corpus or corpus_for(cfg)
        mcfg = model_configs(cfg, corpus)
        splits = {"matched": corpus.test_matched, "novel": corpus.test_novel}
        n_syl = len(corpus.syllable_vocab) - len(RESERVED)
        text_pairs = list(corpus.text) + [TextPair(u.syllables, u.characters, "normal", u.utt_id) for u in corpus.paired]
        train_cfg = cfg.train
        s2c_cfg = dataclasses.replace(train_cfg, steps=cfg.s2c_steps)
        lm_cfg = dataclasses.replace(train_cfg, steps=cfg.lm_steps)
        beam = cfg.beam
        rows: dict = {}
        extras: dict = {}
        models: dict = {}

        def both(fn):
            return {name: _decode_report(utts, fn) for name, utts in splits.items()}

        mark("acoustic")
        acoustic = TransducerModel(mcfg["acoustic"])
        res = train_acoustic(acoustic, corpus.paired, train_cfg, dev=corpus.dev)
        extras["acoustic_dev_ser"] = res.dev.format()
        models["acoustic"] = acoustic

        mark("baseline")
        baseline = TransducerModel(mcfg["baseline"])
        res = train_character_baseline(baseline, corpus.paired, train_cfg, dev=corpus.dev)
        extras["baseline_dev_cer"] = res.dev.format()
        models["baseline"] = baseline
        ms = beam.max_symbols_per_step
        rows["B0"] = both(lambda u: greedy_decode(baseline, u.features, ms))
        plain = BeamConfig(beam.beam_size, 0.0, ms, "none")
        rows["B1"] = both(lambda u: beam_search(baseline, u.features, plain)[0].tokens)

        mark("lm")
        lm = LanguageModel(mcfg["lm"])
        train_lm(lm, [p.characters for p in text_pairs], lm_cfg)
        models["lm"] = lm
        fused = BeamConfig(beam.beam_size, beam.lambda_, ms, "external_lm")
        rows["B2"] = both(lambda u: beam_search(baseline, u.features, fused, lm)[0].tokens)

        syllables = {name: {u.utt_id: greedy_decode(acoustic, u.features, ms) for u in utts}
                     for name, utts in splits.items()}

        def cascade(model, mode):
            bc = BeamConfig(beam.beam_size, beam.lambda_ if mode != "none" else 0.0, ms, mode)
            out = {}
            for name, utts in splits.items():
                pairs = []
                for u in utts:
                    syl = syllables[name][u.utt_id]
                    hyp = beam_search(model, syl, bc)[0].tokens if syl else []
                    pairs.append((u.characters, hyp))
                out[name] = corpus_report(pairs)
            return out

        for key, augment in (("E0", False), ("E1", False), ("E2", True), ("E3", True)):
            mark(key)
            s2c = TransducerModel(mcfg["s2c"][key])
            train_s2c(s2c, text_pairs, s2c_cfg, augment=augment, n_syllables=n_syl)
            models[key] = s2c
            rows[key] = cascade(s2c, "self_fusion" if key == "E3" else "none")

        mark("E4")
        e4 = copy.deepcopy(models["E3"])
        correction = build_correction_set(acoustic, corpus.paired, ms)
        extras["correction_pairs"] = len(correction)
        extras["correction_ser"] = corpus_report(
            (u.syllables, p.syllables) for u, p in zip([u for u in corpus.paired], _align(corpus.paired, correction))
        ).format()
        finetune_with_correction(e4, text_pairs, correction, train_cfg, augment=True, n_syllables=n_syl)
        models["E4"] = e4
        rows["E4"] = cascade(e4, "self_fusion")
        mark("report")

        if out_dir is not None:
            from .checkpoint import save_model

            os.makedirs(out_dir, exist_ok=True)
            for name, m in models.items():
                save_model(m, os.path.join(out_dir, f"{name}.ckpt"))
    except CascadeError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, exc) from exc
    except (ValueError, FloatingPointError, KeyError) as exc:
        raise StageError(stage, exc) from exc

    report = LadderReport(cfg.seed, [LadderRow(k, label, rows[k]["matched"], rows[k]["novel"]) for k, label in LADDER],
                          extras)
    if out_dir is not None:
        with open(os.path.join(out_dir, "ladder.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.render())
        with open(os.path.join(out_dir, "ladder.json"), "w", encoding="utf-8") as fh:
            json.dump(report.to_record(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def _align(paired, correction):
    # correction pairs in paired order; utterances whose decode was empty count as empty output
    by_id = {p.utt_id: p for p in correction}
    return [by_id.get(u.utt_id, TextPair([], u.characters, "correction", u.utt_id)) for u in paired]


def median_cer(reports: list, key: str, split: str = "novel") -> float:
    return float(np.median([r.cer(key, split) for r in reports]))


__all__ = ["LADDER", "LadderRow", "LadderReport", "StageError", "run_experiment", "model_configs", "corpus_for",
           "median_cer"]
