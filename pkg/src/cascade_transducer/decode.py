"""Greedy and beam decoding for transducers, with optional shallow fusion.

The beam search is frame synchronous. Within a frame, hypotheses expand in
levels: each level either closes a hypothesis with a blank (it moves on to the
next frame) or extends it by one label. Candidates reaching the same prefix by
different alignments are merged by adding their probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CapabilityError, ConfigError, ModelKindError
from .models import SOS, DecoderState, LanguageModel, TransducerModel
from .tensor import log_sum_exp

FUSION_MODES = ("none", "external_lm", "self_fusion")


@dataclass
class BeamConfig:
    beam_size: int = 5
    lambda_: float = 0.35
    max_symbols_per_step: int = 10
    fusion_mode: str = "none"

    def __post_init__(self):
        if int(self.beam_size) != self.beam_size or self.beam_size < 1:
            raise ConfigError(f"beam_size must be a positive integer, got {self.beam_size}")
        if int(self.max_symbols_per_step) != self.max_symbols_per_step or self.max_symbols_per_step < 1:
            raise ConfigError(f"max_symbols_per_step must be a positive integer, got {self.max_symbols_per_step}")
        if not self.lambda_ >= 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lambda_}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        self.beam_size = int(self.beam_size)
        self.max_symbols_per_step = int(self.max_symbols_per_step)
        self.lambda_ = float(self.lambda_)


@dataclass
class Hypothesis:
    tokens: tuple
    log_score: float
    fused_score: float
    pred_state: Optional[DecoderState] = None
    lm_state: object = None
    lm_score: float = 0.0


@dataclass
class _Node:
    """Per-prefix cache shared by all hypotheses ending in that prefix."""

    pred_state: DecoderState
    pred_p: np.ndarray
    lm_state: object = None
    lm_next: Optional[np.ndarray] = None


class _Scorer:
    def __init__(self, model: TransducerModel, cfg: BeamConfig, lm: Optional[LanguageModel]):
        self.model = model
        self.mode = cfg.fusion_mode
        self.lam = cfg.lambda_
        if self.mode == "external_lm" and lm is None:
            raise ConfigError("fusion_mode 'external_lm' needs a language model")
        if self.mode == "self_fusion" and model.lm_head is None:
            raise CapabilityError("self fusion needs a model with an LM head")
        if self.mode == "external_lm" and lm.config.vocab != model.vocab_size:
            raise ConfigError(f"LM vocabulary {lm.config.vocab} differs from model output {model.vocab_size}")
        self.lm = lm if self.mode == "external_lm" else None
        self.cache: dict = {}

    def node(self, prefix: tuple) -> _Node:
        hit = self.cache.get(prefix)
        if hit is not None:
            return hit
        m = self.model
        if prefix:
            parent = self.node(prefix[:-1])
            h, state = m.predict(prefix[-1], parent.pred_state)
        else:
            parent = None
            h, state = m.predict(SOS, m.initial_state())
        node = _Node(state, m.pred_projection(h[None])[0])
        if self.mode == "self_fusion":
            node.lm_next = m.lm_head_logprobs(h[None])[0]
        elif self.mode == "external_lm":
            if parent is None:
                lp, node.lm_state = self.lm.step(SOS, self.lm.initial_state())
            else:
                lp, node.lm_state = self.lm.step(prefix[-1], parent.lm_state)
            node.lm_next = lp
        self.cache[prefix] = node
        return node

    def label_lm(self, prefix: tuple, token: int) -> float:
        if self.mode == "none":
            return 0.0
        return float(self.node(prefix).lm_next[token - 1])

    def fused(self, log_score: float, lm_score: float) -> float:
        if self.mode == "none":
            return log_score
        return log_score + self.lam * lm_score


def _encoder_projection(model: TransducerModel, inputs) -> np.ndarray:
    return model.enc_projection(model.encode(inputs))


def greedy_decode(model: TransducerModel, inputs, max_symbols_per_step: int = 10) -> list[int]:
    """Argmax decoding; at most ``max_symbols_per_step`` labels per encoder frame."""
    if max_symbols_per_step < 1:
        raise ConfigError("max_symbols_per_step must be positive")
    enc_p = _encoder_projection(model, inputs)
    blank = model.blank_id
    h, state = model.predict(SOS, model.initial_state())
    pred_p = model.pred_projection(h[None])
    out = []
    for t in range(enc_p.shape[0]):
        for _ in range(max_symbols_per_step):
            lp = model.joint_projected(enc_p[t][None], pred_p)[0]
            k = int(np.argmax(lp))
            if k == blank:
                break
            out.append(k)
            h, state = model.predict(k, state)
            pred_p = model.pred_projection(h[None])
    return out


def _rank(cands: list) -> list:
    # best fused score first; ties go to the larger local step score, then blank, then lower token id
    return sorted(cands, key=lambda c: (-c["fused"], -c["step"], c["kind"], c["tokens"]))


def beam_search(model: TransducerModel, inputs, cfg: Optional[BeamConfig] = None,
                lm: Optional[LanguageModel] = None) -> list[Hypothesis]:
    """n-best list (up to ``beam_size``) ordered by fused score."""
    cfg = cfg or BeamConfig()
    scorer = _Scorer(model, cfg, lm)
    enc_p = _encoder_projection(model, inputs)
    beam, blank, K = cfg.beam_size, model.blank_id, model.vocab_size
    hyps = {(): (0.0, 0.0)}  # prefix -> (log_score, lm_score)

    for t in range(enc_p.shape[0]):
        done: dict = {}
        active = hyps
        for level in range(cfg.max_symbols_per_step + 1):
            if not active:
                break
            prefixes = list(active)
            pred_p = np.stack([scorer.node(p).pred_p for p in prefixes])
            lps = model.joint_projected(enc_p[t][None], pred_p).astype(np.float64)
            cands: dict = {}

            def add(kind, tokens, log_score, lm_score, step):
                key = (kind, tokens)
                prev = cands.get(key)
                if prev is None:
                    cands[key] = {"kind": kind, "tokens": tokens, "log": log_score, "lm": lm_score, "step": step}
                else:
                    prev["log"] = log_sum_exp(prev["log"], log_score)
                    prev["step"] = max(prev["step"], step)

            last = level == cfg.max_symbols_per_step
            for p, lp in zip(prefixes, lps):
                log_score, lm_score = active[p]
                add(0, p, log_score + lp[blank], lm_score, lp[blank])
                if last:
                    continue
                labels = np.delete(np.arange(K), blank)
                order = labels[np.argsort(-lp[labels], kind="stable")][:beam]
                for k in order:
                    k = int(k)
                    add(1, p + (k,), log_score + lp[k], lm_score + scorer.label_lm(p, k), lp[k])
            for c in cands.values():
                c["fused"] = scorer.fused(c["log"], c["lm"])
            kept = _rank(list(cands.values()))[:beam]
            active = {}
            for c in kept:
                if c["kind"] == 0:
                    prev = done.get(c["tokens"])
                    if prev is None:
                        done[c["tokens"]] = (c["log"], c["lm"])
                    else:
                        done[c["tokens"]] = (log_sum_exp(prev[0], c["log"]), c["lm"])
                else:
                    active[c["tokens"]] = (c["log"], c["lm"])
            if len(done) >= beam and active:
                floor = sorted((scorer.fused(*v) for v in done.values()), reverse=True)[beam - 1]
                active = {p: v for p, v in active.items() if scorer.fused(*v) > floor}
        ranked = sorted(done.items(), key=lambda kv: (-scorer.fused(*kv[1]), kv[0]))[:beam]
        hyps = dict(ranked)

    out = []
    for p, (log_score, lm_score) in sorted(hyps.items(), key=lambda kv: (-scorer.fused(*kv[1]), kv[0])):
        node = scorer.node(p)
        out.append(Hypothesis(list(p), float(log_score), float(scorer.fused(log_score, lm_score)),
                              node.pred_state, node.lm_state, float(lm_score)))
    return out


def cascade_config() -> BeamConfig:
    """Decode settings for the second stage: beam 5 with self fusion at 0.35."""
    return BeamConfig(beam_size=5, lambda_=0.35, max_symbols_per_step=10, fusion_mode="self_fusion")


def cascade_decode(acoustic: TransducerModel, s2c: TransducerModel, features,
                   cfg: Optional[BeamConfig] = None) -> list[int]:
    """Greedy syllables from the acoustic stage, then beam search into characters."""
    if acoustic.kind != "acoustic" or s2c.kind != "s2c":
        raise ModelKindError("cascade needs an acoustic model followed by an s2c model")
    cfg = cfg or cascade_config()
    syllables = greedy_decode(acoustic, features, cfg.max_symbols_per_step)
    if not syllables:
        return []
    if max(syllables) >= s2c.config.input_vocab:
        raise ConfigError("acoustic output vocabulary does not fit the s2c input vocabulary")
    best = beam_search(s2c, syllables, cfg)
    return best[0].tokens if best else []


__all__ = ["BeamConfig", "Hypothesis", "greedy_decode", "beam_search", "cascade_decode", "cascade_config",
           "FUSION_MODES"]
