"""Transducer models (acoustic and syllable-to-character) and the recurrent LM."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CapabilityError, ConfigError, DimensionError, ModelKindError, VocabularyError
from .layers import (
    LSTM,
    Conv1d,
    Conv1dSpec,
    Dense,
    Embedding,
    EmbeddingSpec,
    Module,
    RecurrentSpec,
    init_uniform,
    sequence_mask,
)
from .rnnt import transducer_loss
from .tensor import Tensor, log_softmax, no_grad, precision, stable_matmul

BLANK, SOS, EOS, UNK = 0, 1, 2, 3


@dataclass
class ConvLayerConfig:
    filters: int
    kernel_size: int = 3
    stride: int = 1
    dilation: int = 1
    padding: str = "centered"


@dataclass
class ModelConfig:
    """Shape of a transducer.

    ``kind`` is ``"acoustic"`` (feature frames in) or ``"s2c"`` (token ids in).
    Acoustic models use ``conv_layers``; S2C models use a single causal
    convolution of width ``conv_kernel`` when it is non-zero.
    """

    kind: str
    output_vocab: int
    input_dim: int = 0
    input_vocab: int = 0
    embed_dim: int = 64
    conv_layers: list = field(default_factory=list)
    conv_kernel: int = 0
    conv_filters: int = 64
    encoder_layers: int = 1
    encoder_hidden: int = 128
    encoder_proj: Optional[int] = 64
    pred_layers: int = 1
    pred_hidden: int = 128
    pred_proj: Optional[int] = 64
    joint_dim: int = 64
    lm_head: bool = False
    layer_norm: bool = True
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.conv_layers = [c if isinstance(c, ConvLayerConfig) else ConvLayerConfig(**c) for c in self.conv_layers]
        if self.kind not in ("acoustic", "s2c"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind == "acoustic" and self.input_dim < 1:
            raise ConfigError("acoustic models need input_dim")
        if self.kind == "s2c" and self.input_vocab < 1:
            raise ConfigError("s2c models need input_vocab")
        if self.output_vocab < 2:
            raise ConfigError("output vocabulary must hold blank and at least one label")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LMConfig:
    vocab: int
    embed_dim: int = 64
    layers: int = 1
    hidden: int = 128
    proj: Optional[int] = 64
    layer_norm: bool = True
    seed: int = 0
    dtype: str = "float32"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecoderState:
    """Prediction-network recurrent state plus the last token fed to it."""

    lstm: list
    token: int = SOS


@dataclass
class Batch:
    """Right-padded batch. ``inputs`` is B x T x F floats or B x T token ids."""

    inputs: np.ndarray
    input_lens: np.ndarray
    targets: np.ndarray
    target_lens: np.ndarray


def _check_ids(ids: np.ndarray, vocab: int, what: str) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids[(ids < 0) | (ids >= vocab)].flat[0])
        raise VocabularyError(f"{what} id {bad} out of range for vocabulary of size {vocab}")


class TransducerModel(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        with precision(config.dtype):
            self._build(config, rng)

    def _build(self, cfg: ModelConfig, rng: np.random.Generator) -> None:
        self.convs = []
        if cfg.kind == "acoustic":
            size = cfg.input_dim
            for c in cfg.conv_layers:
                spec = Conv1dSpec(c.kernel_size, size, c.filters, c.stride, c.dilation, c.padding)
                self.convs.append(Conv1d(spec, rng))
                size = c.filters
            self.src_embed = None
        else:
            self.src_embed = Embedding(EmbeddingSpec(cfg.input_vocab, cfg.embed_dim), rng)
            size = cfg.embed_dim
            if cfg.conv_kernel:
                spec = Conv1dSpec(cfg.conv_kernel, size, cfg.conv_filters, 1, 1, "causal")
                self.convs.append(Conv1d(spec, rng))
                size = cfg.conv_filters
        self.encoder = LSTM(RecurrentSpec(size, cfg.encoder_hidden, cfg.encoder_layers, cfg.encoder_proj), rng,
                            cfg.layer_norm)
        self.pred_embed = Embedding(EmbeddingSpec(cfg.output_vocab, cfg.embed_dim), rng)
        self.prediction = LSTM(RecurrentSpec(cfg.embed_dim, cfg.pred_hidden, cfg.pred_layers, cfg.pred_proj), rng,
                               cfg.layer_norm)
        d_enc = self.encoder.spec.output_size
        d_pred = self.prediction.spec.output_size
        self.joint_enc = init_uniform(rng, d_enc, cfg.joint_dim, name="joint_enc")
        self.joint_pred = init_uniform(rng, d_pred, cfg.joint_dim, name="joint_pred")
        self.joint_bias = init_uniform(rng, cfg.joint_dim, name="joint_bias")
        self.joint_out = Dense(cfg.joint_dim, cfg.output_vocab, rng)
        self.lm_head = Dense(d_pred, cfg.output_vocab - 1, rng) if cfg.lm_head else None

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def vocab_size(self) -> int:
        return self.config.output_vocab

    @property
    def blank_id(self) -> int:
        return BLANK

    @property
    def dtype(self):
        return np.dtype(self.config.dtype).type

    def encoder_length(self, length: int) -> int:
        for conv in self.convs:
            length = conv.spec.output_length(length)
        return length

    # ------------------------------------------------------------------
    # batched graph forward

    def encode_batch(self, inputs: np.ndarray, lengths: Sequence[int]) -> tuple[Tensor, np.ndarray]:
        lengths = np.asarray(lengths, dtype=np.int64)
        if self.kind == "acoustic":
            if inputs.ndim != 3 or not np.issubdtype(inputs.dtype, np.floating):
                raise ModelKindError("acoustic model expects a B x T x F feature array")
            x = Tensor(inputs.astype(self.dtype, copy=False))
        else:
            if not np.issubdtype(np.asarray(inputs).dtype, np.integer):
                raise ModelKindError("s2c model expects token id sequences")
            x = self.src_embed(inputs)
        for conv in self.convs:
            x = conv(x).relu()
            lengths = np.array([conv.spec.output_length(int(n)) for n in lengths])
            if conv.spec.padding_mode == "centered":
                # centered taps would otherwise read past each item's end
                x = x * sequence_mask(lengths, x.shape[1], x.dtype)[:, :, None]
        h, _ = self.encoder(x)
        return h, lengths

    def predict_batch(self, targets: np.ndarray) -> Tensor:
        B = targets.shape[0]
        _check_ids(targets, self.vocab_size, "target")
        ids = np.concatenate([np.full((B, 1), SOS, dtype=np.int64), targets.astype(np.int64)], axis=1)
        h, _ = self.prediction(self.pred_embed(ids))
        return h

    def joint_lattice(self, h_enc: Tensor, h_pred: Tensor) -> Tensor:
        """Log-probabilities for every (t, u): B x T x (U+1) x K."""
        ep = h_enc @ self.joint_enc
        pp = h_pred @ self.joint_pred
        B, T, J = ep.shape
        U1 = pp.shape[1]
        z = (ep.reshape(B, T, 1, J) + pp.reshape(B, 1, U1, J) + self.joint_bias).tanh()
        return log_softmax(self.joint_out(z))

    def lm_head_batch(self, h_pred: Tensor) -> Tensor:
        if self.lm_head is None:
            raise CapabilityError("model has no LM head")
        return log_softmax(self.lm_head(h_pred))

    # ------------------------------------------------------------------
    # single-utterance inference (no graph)

    def encode(self, inputs) -> np.ndarray:
        """Encoder output for one utterance: T' x d."""
        if self.kind == "acoustic":
            arr = np.asarray(inputs)
            if arr.ndim != 2 or not np.issubdtype(arr.dtype, np.floating):
                raise ModelKindError("acoustic model expects a T x F feature matrix")
            if arr.shape[1] != self.config.input_dim:
                raise DimensionError(f"expected {self.config.input_dim} feature dims, got {arr.shape[1]}")
            batch = arr[None]
        else:
            arr = np.asarray(inputs, dtype=np.int64) if len(inputs) else np.zeros(0, np.int64)
            if isinstance(inputs, np.ndarray) and np.issubdtype(inputs.dtype, np.floating):
                raise ModelKindError("s2c model expects token ids, got a float array")
            if arr.ndim != 1:
                raise ModelKindError("s2c model expects a 1-D token id sequence")
            _check_ids(arr, self.config.input_vocab, "input")
            batch = arr[None]
        d = self.encoder.spec.output_size
        if batch.shape[1] == 0:
            return np.zeros((0, d), dtype=self.dtype)
        with no_grad():
            h, _ = self.encode_batch(batch, [batch.shape[1]])
        return h.data[0]

    def initial_state(self) -> DecoderState:
        return DecoderState(self.prediction.zero_state(1, self.dtype), SOS)

    def predict(self, token: int, state: DecoderState) -> tuple[np.ndarray, DecoderState]:
        """Prediction-network output after feeding ``token``."""
        if not 0 <= token < self.vocab_size:
            raise VocabularyError(f"token id {token} out of range for vocabulary of size {self.vocab_size}")
        x = self.pred_embed.table.data[token][None]
        out, lstm_state = self.prediction.step(x, state.lstm)
        return out[0], DecoderState(lstm_state, token)

    def enc_projection(self, h_enc: np.ndarray) -> np.ndarray:
        return stable_matmul(h_enc, self.joint_enc.data)

    def pred_projection(self, h_pred: np.ndarray) -> np.ndarray:
        return stable_matmul(h_pred, self.joint_pred.data)

    def joint_projected(self, enc_p: np.ndarray, pred_p: np.ndarray) -> np.ndarray:
        z = np.tanh(enc_p + pred_p + self.joint_bias.data)
        logits = stable_matmul(z, self.joint_out.weight.data) + self.joint_out.bias.data
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def joint(self, h_enc_t: np.ndarray, h_pred_u: np.ndarray) -> np.ndarray:
        """log P(k | t, u) over the K outputs for one lattice cell."""
        h_enc_t = np.asarray(h_enc_t)
        h_pred_u = np.asarray(h_pred_u)
        if h_enc_t.shape[-1] != self.joint_enc.shape[0] or h_pred_u.shape[-1] != self.joint_pred.shape[0]:
            raise DimensionError(
                f"joint expects encoder/prediction widths {self.joint_enc.shape[0]}/{self.joint_pred.shape[0]}, "
                f"got {h_enc_t.shape}/{h_pred_u.shape}")
        return self.joint_projected(self.enc_projection(h_enc_t), self.pred_projection(h_pred_u))

    def lattice(self, h_enc: np.ndarray, h_pred: np.ndarray) -> np.ndarray:
        """All cells at once: T x (U+1) x K; matches per-cell ``joint`` bit for bit."""
        ep = self.enc_projection(h_enc)
        pp = self.pred_projection(h_pred)
        return self.joint_projected(ep[:, None, :], pp[None, :, :])

    def lm_head_logprobs(self, h_pred: np.ndarray) -> np.ndarray:
        """log-softmax of the LM head; index i is token id i+1 (blank excluded)."""
        if self.lm_head is None:
            raise CapabilityError("model has no LM head")
        logits = stable_matmul(np.asarray(h_pred), self.lm_head.weight.data) + self.lm_head.bias.data
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def prediction_outputs(self, tokens: Sequence[int]) -> np.ndarray:
        """h_pred for u = 0..len(tokens) via one unrolled pass: (U+1) x d."""
        ids = np.asarray(tokens, dtype=np.int64)[None]
        with no_grad():
            return self.predict_batch(ids.reshape(1, -1)).data[0]

    def streaming_encoder(self) -> "StreamingEncoder":
        return StreamingEncoder(self)


class StreamingEncoder:
    """Frame-by-frame encoder for causal S2C models."""

    def __init__(self, model: TransducerModel):
        if model.kind != "s2c":
            raise ModelKindError("streaming encoding is defined for s2c models")
        self.model = model
        self.conv = model.convs[0] if model.convs else None
        width = (self.conv.spec.kernel_size - 1) if self.conv else 0
        d = model.config.embed_dim
        self.window = [np.zeros(d, dtype=model.dtype) for _ in range(width)]
        self.state = model.encoder.zero_state(1, model.dtype)

    def push(self, token: int) -> np.ndarray:
        m = self.model
        _check_ids(np.array([token]), m.config.input_vocab, "input")
        x = m.src_embed.table.data[token]
        if self.conv is not None:
            self.window.append(x)
            cols = np.concatenate(self.window)[None]
            self.window.pop(0)
            x = stable_matmul(cols, self.conv.weight.data) + self.conv.bias.data
            x = x * (x > 0)
        else:
            x = x[None]
        out, self.state = m.encoder.step(x, self.state)
        return out[0]


# --------------------------------------------------------------------------
# losses


def lm_cross_entropy(logp: Tensor, targets: np.ndarray, lengths: Sequence[int]) -> Tensor:
    """Mean next-token cross-entropy over valid positions.

    ``logp`` is B x (U+1) x V with index i meaning token id i+1; targets are the
    character ids; position U of each item predicts end-of-sequence.
    """
    B, U1, V = logp.shape
    tgt = np.zeros((B, U1), dtype=np.int64)
    mask = np.zeros((B, U1), dtype=bool)
    for b in range(B):
        n = int(lengths[b])
        tgt[b, :n] = targets[b, :n] - 1
        tgt[b, n] = EOS - 1
        mask[b, :n + 1] = True
    bi, ui = np.nonzero(mask)
    picked = logp[bi, ui, tgt[bi, ui]]
    return -picked.mean()


def model_loss(model: TransducerModel, batch: Batch, parts: Optional[dict] = None) -> Tensor:
    """Transducer loss, plus the LM-head cross-entropy when the head exists."""
    h_enc, enc_lens = model.encode_batch(batch.inputs, batch.input_lens)
    h_pred = model.predict_batch(batch.targets)
    logp = model.joint_lattice(h_enc, h_pred)
    loss = transducer_loss(logp, batch.targets, enc_lens, batch.target_lens, model.blank_id)
    if parts is not None:
        parts["rnnt"] = loss.item()
    if model.lm_head is not None:
        ce = lm_cross_entropy(model.lm_head_batch(h_pred), batch.targets, batch.target_lens)
        if parts is not None:
            parts["ce"] = ce.item()
        loss = loss + ce
    return loss


class LanguageModel(Module):
    """Recurrent next-token model; output index i is token id i+1."""

    def __init__(self, config: LMConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        with precision(config.dtype):
            self.embed = Embedding(EmbeddingSpec(config.vocab, config.embed_dim), rng)
            self.rnn = LSTM(RecurrentSpec(config.embed_dim, config.hidden, config.layers, config.proj), rng,
                            config.layer_norm)
            self.out = Dense(self.rnn.spec.output_size, config.vocab - 1, rng)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype).type

    def logprobs_batch(self, targets: np.ndarray) -> Tensor:
        B = targets.shape[0]
        ids = np.concatenate([np.full((B, 1), SOS, dtype=np.int64), targets.astype(np.int64)], axis=1)
        h, _ = self.rnn(self.embed(ids))
        return log_softmax(self.out(h))

    def loss(self, targets: np.ndarray, lengths: Sequence[int]) -> Tensor:
        return lm_cross_entropy(self.logprobs_batch(targets), targets, lengths)

    def initial_state(self):
        return self.rnn.zero_state(1, self.dtype)

    def step(self, token: int, state) -> tuple[np.ndarray, list]:
        """Feed ``token``; return log-probs of the next token and the new state."""
        if not 0 <= token < self.config.vocab:
            raise VocabularyError(f"token id {token} out of range for vocabulary of size {self.config.vocab}")
        x = self.embed.table.data[token][None]
        h, state = self.rnn.step(x, state)
        logits = stable_matmul(h, self.out.weight.data) + self.out.bias.data
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return (shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True)))[0], state

    def sequence_logprob(self, tokens: Sequence[int], with_eos: bool = True) -> float:
        state = self.initial_state()
        lp, state = self.step(SOS, state)
        total = 0.0
        for tok in tokens:
            total += float(lp[tok - 1])
            lp, state = self.step(tok, state)
        if with_eos:
            total += float(lp[EOS - 1])
        return total


def uniform_lm_head_(model: TransducerModel) -> None:
    """Zero the LM head and stop its gradients (uniform next-token distribution)."""
    if model.lm_head is None:
        raise CapabilityError("model has no LM head")
    for p in (model.lm_head.weight, model.lm_head.bias):
        p.data = np.zeros_like(p.data)
        p.requires_grad = False

