"""Optimizer, clipping and training loops for transducers and language models."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .data import TextPair, Utterance, mix_batches, pad_batch, text_augment
from .errors import ConfigError, DimensionError, DivergenceError
from .layers import Module
from .metrics import CorpusReport, corpus_report
from .models import Batch, LanguageModel, TransducerModel, model_loss
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 16
    steps: int = 2000
    learning_rate: float = 3e-4
    clip_norm: float = 5.0
    seed: int = 0
    eval_every: int = 0
    augment_p: float = 0.05
    finetune_lr: float = 1e-4
    finetune_steps: int = 500
    mix_ratio: int = 7

    def __post_init__(self):
        for name in ("batch_size", "mix_ratio"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("steps", "eval_every", "finetune_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("learning_rate", "clip_norm", "finetune_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.augment_p < 1:
            raise ConfigError("augment_p must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_global_norm(grads: Sequence[np.ndarray], clip_norm: float) -> list[np.ndarray]:
    """Scale all gradients by clip_norm/g when their joint L2 norm g exceeds clip_norm."""
    if not clip_norm > 0:
        raise ConfigError("clip_norm must be positive")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return list(grads)
    scale = clip_norm / norm
    return [(g * scale).astype(g.dtype) for g in grads]


class Adam:
    """Adam with bias correction."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: Optional[float] = 5.0):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Optional[Sequence[Optional[np.ndarray]]] = None) -> float:
        """Apply one update; returns the pre-clipping gradient norm."""
        if grads is None:
            grads = [p.grad if p.requires_grad else None for p in self.params]
        if len(grads) != len(self.params):
            raise DimensionError("one gradient per parameter is required")
        live = [i for i, g in enumerate(grads) if g is not None]
        for i in live:
            if grads[i].shape != self.params[i].data.shape:
                raise DimensionError(f"gradient shape {grads[i].shape} != parameter shape {self.params[i].data.shape}")
        gs = [grads[i] for i in live]
        norm = global_norm(gs) if gs else 0.0
        if self.clip_norm is not None and gs:
            gs = clip_global_norm(gs, self.clip_norm)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, g in zip(live, gs):
            p = self.params[i]
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            update = self.learning_rate * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)
        return norm


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    dev: Optional[CorpusReport] = None
    history: list = field(default_factory=list)  # (step, dev error rate)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[i:i + batch_size]


def run_steps(module: Module, loss_fn: Callable[[int], Tensor], steps: int, learning_rate: float,
              clip_norm: float, optimizer: Optional[Adam] = None,
              on_step: Optional[Callable[[int], None]] = None) -> list[float]:
    """Generic loop: loss_fn(step) builds the graph for one batch."""
    opt = optimizer or Adam(module.parameters(), learning_rate, clip_norm=clip_norm)
    losses = []
    for step in range(steps):
        module.zero_grad()
        loss = loss_fn(step)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        loss.backward()
        opt.step()
        losses.append(value)
        if on_step is not None:
            on_step(step + 1)
    return losses


def evaluate_transducer(model: TransducerModel, inputs: Sequence, targets: Sequence[Sequence[int]],
                        max_symbols: int = 10) -> CorpusReport:
    from .decode import greedy_decode

    return corpus_report((list(y), greedy_decode(model, x, max_symbols)) for x, y in zip(inputs, targets))


def train_transducer(model: TransducerModel, inputs: Sequence, targets: Sequence[Sequence[int]], cfg: TrainConfig,
                     transform: Optional[Callable] = None, dev: Optional[tuple] = None,
                     batch_source: Optional[Iterator] = None, learning_rate: Optional[float] = None,
                     steps: Optional[int] = None) -> TrainResult:
    """Train on (input, target) examples; ``transform(inputs, rng)`` rewrites batch inputs.

    ``batch_source`` overrides sampling with an iterator of (inputs, targets) lists.
    """
    if len(inputs) != len(targets):
        raise DimensionError("inputs and targets differ in length")
    if not inputs and batch_source is None:
        raise ConfigError("no training examples")
    rng = np.random.default_rng(cfg.seed)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    idx_iter = _batches(len(inputs), min(cfg.batch_size, max(1, len(inputs))), rng) if inputs else None
    result = TrainResult()

    def loss_fn(step):
        if batch_source is not None:
            xs, ys = next(batch_source)
        else:
            idx = next(idx_iter)
            xs = [inputs[i] for i in idx]
            ys = [targets[i] for i in idx]
        if transform is not None:
            xs = transform(xs, aug_rng)
        return model_loss(model, pad_batch(xs, ys))

    def on_step(step):
        if dev is not None and cfg.eval_every and step % cfg.eval_every == 0:
            rep = evaluate_transducer(model, *dev)
            result.history.append((step, rep.error_rate))
            log.info("step %d dev error %.4f", step, rep.error_rate)

    result.losses = run_steps(model, loss_fn, cfg.steps if steps is None else steps,
                              learning_rate or cfg.learning_rate, cfg.clip_norm, on_step=on_step)
    if dev is not None:
        result.dev = evaluate_transducer(model, *dev)
    return result


def train_acoustic(model: TransducerModel, utterances: Sequence[Utterance], cfg: TrainConfig,
                   dev: Optional[Sequence[Utterance]] = None) -> TrainResult:
    """Features to syllables."""
    _expect(model, "acoustic")
    dev_t = ([u.features for u in dev], [u.syllables for u in dev]) if dev else None
    return train_transducer(model, [u.features for u in utterances], [u.syllables for u in utterances], cfg,
                            dev=dev_t)


def train_character_baseline(model: TransducerModel, utterances: Sequence[Utterance], cfg: TrainConfig,
                             dev: Optional[Sequence[Utterance]] = None) -> TrainResult:
    """Features straight to characters."""
    _expect(model, "acoustic")
    dev_t = ([u.features for u in dev], [u.characters for u in dev]) if dev else None
    return train_transducer(model, [u.features for u in utterances], [u.characters for u in utterances], cfg,
                            dev=dev_t)


def syllable_augmenter(p: float, n_syllables: int) -> Callable:
    def transform(xs, rng):
        return [text_augment(TextPair(list(x), []), p, rng, n_syllables).syllables for x in xs]
    return transform


def train_s2c(model: TransducerModel, pairs: Sequence[TextPair], cfg: TrainConfig, augment: bool = False,
              n_syllables: Optional[int] = None, dev: Optional[Sequence[TextPair]] = None) -> TrainResult:
    """Syllables to characters, optionally with random syllable substitution."""
    _expect(model, "s2c")
    transform = None
    if augment:
        if n_syllables is None:
            raise ConfigError("augmentation needs n_syllables")
        transform = syllable_augmenter(cfg.augment_p, n_syllables)
    dev_t = ([p.syllables for p in dev], [p.characters for p in dev]) if dev else None
    return train_transducer(model, [p.syllables for p in pairs], [p.characters for p in pairs], cfg,
                            transform=transform, dev=dev_t)


def finetune_with_correction(model: TransducerModel, normal: Sequence[TextPair], correction: Sequence[TextPair],
                             cfg: TrainConfig, augment: bool = False, n_syllables: Optional[int] = None,
                             steps: Optional[int] = None) -> TrainResult:
    """Continue S2C training at the finetune rate over mixed normal/correction batches.

    Augmentation, when enabled, applies to the normal pairs only; correction
    pairs already carry real recognition errors.
    """
    _expect(model, "s2c")
    n = cfg.finetune_steps if steps is None else steps
    if n == 0:
        return TrainResult()
    stream = mix_batches(normal, correction, cfg.mix_ratio, cfg.batch_size, seed=cfg.seed)
    aug_rng = np.random.default_rng([cfg.seed, 2])

    def source():
        for batch in stream:
            xs = []
            for p in batch:
                if augment and p.origin == "normal":
                    p = text_augment(p, cfg.augment_p, aug_rng, n_syllables)
                xs.append(p.syllables)
            yield xs, [p.characters for p in batch]

    return train_transducer(model, [], [], cfg, batch_source=source(), learning_rate=cfg.finetune_lr, steps=n)


def train_lm(lm: LanguageModel, sequences: Sequence[Sequence[int]], cfg: TrainConfig) -> TrainResult:
    if not sequences:
        raise ConfigError("no training sequences")
    rng = np.random.default_rng(cfg.seed)
    idx_iter = _batches(len(sequences), min(cfg.batch_size, len(sequences)), rng)
    from .data import pad_sequences

    def loss_fn(step):
        idx = next(idx_iter)
        y, yl = pad_sequences([np.asarray(sequences[i], dtype=np.int64) for i in idx], dtype=np.int64)
        return lm.loss(y, yl)

    return TrainResult(run_steps(lm, loss_fn, cfg.steps, cfg.learning_rate, cfg.clip_norm))


def lm_perplexity(lm: LanguageModel, sequences: Sequence[Sequence[int]]) -> float:
    total = 0.0
    count = 0
    for s in sequences:
        total += lm.sequence_logprob(s)
        count += len(s) + 1
    return math.exp(-total / count)


def _expect(model: TransducerModel, kind: str) -> None:
    from .errors import ModelKindError

    if model.kind != kind:
        raise ModelKindError(f"expected a {kind} model, got {model.kind}")


__all__ = ["TrainConfig", "TrainResult", "Adam", "clip_global_norm", "global_norm", "run_steps", "train_transducer",
           "train_acoustic", "train_character_baseline", "train_s2c", "finetune_with_correction", "train_lm",
           "evaluate_transducer", "lm_perplexity", "syllable_augmenter"]
