"""Neural building blocks: embedding, 1-D convolution, LSTM with projection,
layer normalization and fully connected layers.

Recurrent and convolution layers are fused ops with hand-written backward
passes; one graph node per layer keeps Python overhead flat in sequence
length.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import DimensionError, StateError, VocabularyError
from .tensor import Tensor, _sigmoid, get_default_dtype, stable_matmul

INIT_SCALE = 0.05
FORGET_BIAS = 1.0
LN_EPS = 1e-5


def init_uniform(rng: np.random.Generator, *shape: int, name: str = "") -> Tensor:
    data = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(get_default_dtype())
    return Tensor(data, requires_grad=True, name=name)


def init_const(value: float, *shape: int, name: str = "") -> Tensor:
    return Tensor(np.full(shape, value, dtype=get_default_dtype()), requires_grad=True, name=name)


class Module:
    """Parameter container; attributes that are tensors or modules are walked."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise DimensionError(f"parameter names differ: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


# --------------------------------------------------------------------------
# embedding


@dataclass(frozen=True)
class EmbeddingSpec:
    vocab_size: int
    dim: int


class Embedding(Module):
    def __init__(self, spec: EmbeddingSpec, rng: np.random.Generator):
        self.spec = spec
        self.table = init_uniform(rng, spec.vocab_size, spec.dim, name="table")

    def __call__(self, ids) -> Tensor:
        return embed(self.table, ids)

    def named_parameters(self, prefix=""):
        yield f"{prefix}table", self.table


def embed(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by ``ids`` (any integer array shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids[(ids < 0) | (ids >= vocab)].flat[0])
        raise VocabularyError(f"token id {bad} out of range for vocabulary of size {vocab}")
    return table.take_rows(ids)


# --------------------------------------------------------------------------
# convolution


@dataclass(frozen=True)
class Conv1dSpec:
    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int = 1
    dilation: int = 1
    padding_mode: str = "causal"  # or "centered"

    def __post_init__(self):
        for field in ("kernel_size", "in_channels", "out_channels", "stride", "dilation"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if self.padding_mode not in ("causal", "centered"):
            raise ValueError(f"unknown padding_mode {self.padding_mode!r}")

    @property
    def lookahead(self) -> int:
        if self.padding_mode == "causal":
            return 0
        return (self.kernel_size - 1) // 2 * self.dilation

    @property
    def left_pad(self) -> int:
        return (self.kernel_size - 1) * self.dilation - self.lookahead

    def output_length(self, length: int) -> int:
        return conv_output_length(length, self.stride)


def conv_output_length(length: int, stride: int) -> int:
    return -(-length // stride)


class Conv1d(Module):
    def __init__(self, spec: Conv1dSpec, rng: np.random.Generator):
        self.spec = spec
        self.weight = init_uniform(rng, spec.kernel_size * spec.in_channels, spec.out_channels, name="weight")
        self.bias = init_uniform(rng, spec.out_channels, name="bias")

    def named_parameters(self, prefix=""):
        yield f"{prefix}weight", self.weight
        yield f"{prefix}bias", self.bias

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(self.spec, self.weight, self.bias, x)


def _im2col(xp: np.ndarray, spec: Conv1dSpec, t_out: int) -> np.ndarray:
    s, d = spec.stride, spec.dilation
    taps = [xp[:, j * d: j * d + (t_out - 1) * s + 1: s, :] for j in range(spec.kernel_size)]
    return np.concatenate(taps, axis=-1)  # B x T' x (k*C)


def conv1d(spec: Conv1dSpec, weight: Tensor, bias: Tensor, x: Tensor) -> Tensor:
    """Strided/dilated 1-D convolution over ``x`` shaped [T, C] or [B, T, C].

    Causal mode prepends (k-1)*dilation zeros, so output i sees inputs up to
    i*stride. Centered mode splits the padding, looking floor((k-1)/2)*dilation
    frames ahead. Either way the output has ceil(T / stride) frames.
    """
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.shape[-1] != spec.in_channels:
        raise DimensionError(f"conv1d expects {spec.in_channels} input channels, got shape {x.shape}")
    b, t, c = xd.shape
    t_out = spec.output_length(t)
    if t_out == 0:
        out = np.zeros((b, 0, spec.out_channels), dtype=xd.dtype)
        return Tensor(out[0] if squeeze else out)
    lp, rp = spec.left_pad, spec.lookahead
    xp = np.concatenate([np.zeros((b, lp, c), xd.dtype), xd, np.zeros((b, rp, c), xd.dtype)], axis=1)
    cols = _im2col(xp, spec, t_out)
    out = stable_matmul(cols, weight.data) + bias.data

    def backward(g):
        g3 = g[None] if squeeze else g
        if weight.requires_grad:
            weight._accumulate(cols.reshape(-1, cols.shape[-1]).T @ g3.reshape(-1, g3.shape[-1]))
        if bias.requires_grad:
            bias._accumulate(g3.reshape(-1, g3.shape[-1]).sum(axis=0))
        if x.requires_grad:
            dcols = g3 @ weight.data.T
            dxp = np.zeros_like(xp)
            s, d = spec.stride, spec.dilation
            for j in range(spec.kernel_size):
                dxp[:, j * d: j * d + (t_out - 1) * s + 1: s, :] += dcols[..., j * c:(j + 1) * c]
            dx = dxp[:, lp: lp + t, :]
            x._accumulate(dx[0] if squeeze else dx)

    return Tensor._make(out[0] if squeeze else out, (x, weight, bias), backward)


# --------------------------------------------------------------------------
# layer norm and dense


class LayerNorm(Module):
    def __init__(self, dim: int):
        if dim < 2:
            raise DimensionError("layer norm needs at least 2 features")
        self.gain = init_const(1.0, dim, name="gain")
        self.bias = init_const(0.0, dim, name="bias")

    def named_parameters(self, prefix=""):
        yield f"{prefix}gain", self.gain
        yield f"{prefix}bias", self.bias

    def __call__(self, v: Tensor) -> Tensor:
        return layer_norm(self.gain, self.bias, v)


def layer_norm(gain: Tensor, bias: Tensor, v: Tensor, eps: float = LN_EPS) -> Tensor:
    x = v.data
    if x.shape[-1] < 2:
        raise DimensionError("layer norm needs at least 2 features")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=lead))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=lead))
        if v.requires_grad:
            gx = g * gain.data
            d = x.shape[-1]
            dx = inv / d * (d * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True))
            v._accumulate(dx)

    return Tensor._make(out, (v, gain, bias), backward)


class Dense(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = init_uniform(rng, in_dim, out_dim, name="weight")
        self.bias = init_uniform(rng, out_dim, name="bias")

    def named_parameters(self, prefix=""):
        yield f"{prefix}weight", self.weight
        yield f"{prefix}bias", self.bias

    def __call__(self, v: Tensor) -> Tensor:
        return dense(self.weight, self.bias, v)


def dense(weight: Tensor, bias: Tensor, v: Tensor) -> Tensor:
    if v.shape[-1] != weight.shape[0]:
        raise DimensionError(f"dense expects input width {weight.shape[0]}, got shape {v.shape}")
    return v @ weight + bias


# --------------------------------------------------------------------------
# LSTM with optional projection


@dataclass(frozen=True)
class RecurrentSpec:
    input_size: int
    hidden_units: int
    layers: int = 1
    projection_units: Optional[int] = None

    @property
    def output_size(self) -> int:
        return self.projection_units or self.hidden_units


class LSTMLayer(Module):
    """One LSTM layer; gate order in the packed weights is i, f, g, o."""

    def __init__(self, input_size: int, hidden: int, proj: Optional[int], rng: np.random.Generator):
        self.hidden = hidden
        self.out_size = proj or hidden
        self.w_x = init_uniform(rng, input_size, 4 * hidden, name="w_x")
        self.w_h = init_uniform(rng, self.out_size, 4 * hidden, name="w_h")
        b = rng.uniform(-INIT_SCALE, INIT_SCALE, size=4 * hidden).astype(get_default_dtype())
        b[hidden:2 * hidden] = FORGET_BIAS
        self.b = Tensor(b, requires_grad=True, name="b")
        self.w_p = init_uniform(rng, hidden, proj, name="w_p") if proj else None

    def named_parameters(self, prefix=""):
        yield f"{prefix}w_x", self.w_x
        yield f"{prefix}w_h", self.w_h
        yield f"{prefix}b", self.b
        if self.w_p is not None:
            yield f"{prefix}w_p", self.w_p

    def zero_state(self, batch: int, dtype) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((batch, self.out_size), dtype), np.zeros((batch, self.hidden), dtype)

    def cell(self, xw: np.ndarray, h: np.ndarray, c: np.ndarray):
        """One step given the precomputed input projection ``xw``."""
        H = self.hidden
        z = xw + stable_matmul(h, self.w_h.data) + self.b.data
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        m = o * tc
        h_new = stable_matmul(m, self.w_p.data) if self.w_p is not None else m
        return h_new, c_new, (i, f, g, o, tc, m)

    def __call__(self, x: Tensor, state=None):
        """Run over ``x`` [B, T, D]; returns outputs [B, T, P] and the final state."""
        xd = x.data
        B, T, _ = xd.shape
        h, c = state if state is not None else self.zero_state(B, xd.dtype)
        xw = stable_matmul(xd, self.w_x.data)
        hs, cs, caches = [h], [c], []
        ys = np.empty((B, T, self.out_size), dtype=xd.dtype)
        for t in range(T):
            h, c, cache = self.cell(xw[:, t], h, c)
            hs.append(h)
            cs.append(c)
            caches.append(cache)
            ys[:, t] = h
        layer = self

        def backward(gy):
            H = layer.hidden
            dw_x = np.zeros_like(layer.w_x.data)
            dw_h = np.zeros_like(layer.w_h.data)
            db = np.zeros_like(layer.b.data)
            dw_p = np.zeros_like(layer.w_p.data) if layer.w_p is not None else None
            dxw = np.empty((B, T, 4 * H), dtype=xd.dtype)
            dh_next = np.zeros((B, layer.out_size), dtype=xd.dtype)
            dc_next = np.zeros((B, H), dtype=xd.dtype)
            for t in reversed(range(T)):
                i, f, g, o, tc, m = caches[t]
                dh = gy[:, t] + dh_next
                if dw_p is not None:
                    dw_p += m.T @ dh
                    dm = dh @ layer.w_p.data.T
                else:
                    dm = dh
                do = dm * tc
                dc = dc_next + dm * o * (1 - tc * tc)
                di = dc * g
                dg = dc * i
                df = dc * cs[t]
                dc_next = dc * f
                dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1)
                dxw[:, t] = dz
                dw_h += hs[t].T @ dz
                db += dz.sum(axis=0)
                dh_next = dz @ layer.w_h.data.T
            dxw2 = dxw.reshape(-1, 4 * H)
            if layer.w_x.requires_grad:
                layer.w_x._accumulate(xd.reshape(-1, xd.shape[-1]).T @ dxw2)
            if layer.w_h.requires_grad:
                layer.w_h._accumulate(dw_h)
            if layer.b.requires_grad:
                layer.b._accumulate(db)
            if dw_p is not None and layer.w_p.requires_grad:
                layer.w_p._accumulate(dw_p)
            if x.requires_grad:
                x._accumulate((dxw2 @ layer.w_x.data.T).reshape(xd.shape))

        parents = [x] + self.parameters()
        return Tensor._make(ys, parents, backward), (h, c)


class LSTM(Module):
    """Stack of LSTM layers, each optionally followed by layer norm."""

    def __init__(self, spec: RecurrentSpec, rng: np.random.Generator, layer_norm: bool = True):
        self.spec = spec
        self.layers = []
        self.norms = []
        size = spec.input_size
        for _ in range(spec.layers):
            self.layers.append(LSTMLayer(size, spec.hidden_units, spec.projection_units, rng))
            if layer_norm:
                self.norms.append(LayerNorm(spec.output_size))
            size = spec.output_size

    def zero_state(self, batch: int = 1, dtype=None):
        dtype = dtype or self.layers[0].w_x.dtype
        return [layer.zero_state(batch, dtype) for layer in self.layers]

    def check_state(self, state) -> None:
        if len(state) != len(self.layers):
            raise StateError(f"expected state for {len(self.layers)} layers, got {len(state)}")
        for layer, (h, c) in zip(self.layers, state):
            if h.shape[-1] != layer.out_size or c.shape[-1] != layer.hidden or h.shape[0] != c.shape[0]:
                raise StateError(
                    f"state shapes {h.shape}/{c.shape} do not match layer ({layer.out_size}, {layer.hidden})")

    def __call__(self, x: Tensor, state=None):
        if state is not None:
            self.check_state(state)
        new_state = []
        for n, layer in enumerate(self.layers):
            x, st = layer(x, None if state is None else state[n])
            if self.norms:
                x = self.norms[n](x)
            new_state.append(st)
        return x, new_state

    def step(self, x: np.ndarray, state):
        """Advance one frame for a batch of inputs ``x`` [B, D] (no graph)."""
        self.check_state(state)
        new_state = []
        for n, layer in enumerate(self.layers):
            h, c = state[n]
            h, c, _ = layer.cell(stable_matmul(x, layer.w_x.data), h, c)
            new_state.append((h, c))
            x = h
            if self.norms:
                norm = self.norms[n]
                x = layer_norm(norm.gain, norm.bias, Tensor(x)).data
        return x, new_state


def recurrent_step(lstm: LSTM, x, state=None):
    """Single-step form of the recurrence for one input vector.

    Returns ``(output, new_state)``; a ``None`` state means the zero state.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    if x.ndim == 1:
        x = x[None]
    if state is None:
        state = lstm.zero_state(x.shape[0], x.dtype)
    out, new_state = lstm.step(x, state)
    return out, new_state


def sequence_mask(lengths: Sequence[int], max_len: int, dtype=None) -> np.ndarray:
    lengths = np.asarray(lengths)
    mask = np.arange(max_len)[None, :] < lengths[:, None]
    return mask.astype(dtype or get_default_dtype())

