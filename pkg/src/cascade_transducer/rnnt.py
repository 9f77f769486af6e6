"""Transducer loss: forward-backward over the alignment lattice.

A lattice holds log P(k | t, u) for t < T frames and u <= U emitted labels.
Every alignment is a monotone path from (0, 0) that emits the U labels in
order and ends with the blank at (T-1, U), so there are C(T+U-1, U) of them.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, SizeError
from .tensor import LOG_ZERO, Tensor, log_sum_exp

MAX_BRUTE_FORCE = 14


@dataclass
class LogitLattice:
    values: np.ndarray  # T x (U+1) x K log-probabilities
    label_ids: Sequence[int]
    blank_id: int = 0
    validate: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.label_ids = [int(y) for y in self.label_ids]
        if self.values.ndim != 3:
            raise DimensionError(f"lattice must be T x (U+1) x K, got {self.values.shape}")
        T, U1, K = self.values.shape
        if T < 1:
            raise ValueError("lattice needs at least one frame")
        if U1 != len(self.label_ids) + 1:
            raise DimensionError(f"lattice has {U1} label positions for {len(self.label_ids)} labels")
        if not 0 <= self.blank_id < K:
            raise ValueError(f"blank id {self.blank_id} outside vocabulary of size {K}")
        for y in self.label_ids:
            if not 0 <= y < K or y == self.blank_id:
                raise ValueError(f"label id {y} invalid for K={K}, blank={self.blank_id}")
        if self.validate:
            sums = np.exp(self.values.astype(np.float64)).sum(axis=-1)
            if not np.allclose(sums, 1.0, atol=1e-5, rtol=0):
                raise ValueError("lattice rows are not normalized log-probabilities")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def U(self) -> int:
        return len(self.label_ids)

    def blank_and_label(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.values.astype(np.float64)
        lp_blank = np.ascontiguousarray(v[:, :, self.blank_id])
        if self.U:
            lp_label = np.ascontiguousarray(v[:, np.arange(self.U), self.label_ids])
        else:
            lp_label = np.zeros((self.T, 0))
        return lp_blank, lp_label

    @classmethod
    def from_logits(cls, logits, label_ids, blank_id: int = 0) -> "LogitLattice":
        x = np.asarray(logits, dtype=np.float64)
        x = x - x.max(axis=-1, keepdims=True)
        x = x - np.log(np.exp(x).sum(axis=-1, keepdims=True))
        return cls(x, label_ids, blank_id)


@dataclass
class AlignmentLattice:
    alpha: np.ndarray
    beta: np.ndarray
    log_likelihood: float
    lp_blank: np.ndarray = field(repr=False)
    lp_label: np.ndarray = field(repr=False)

    def diagonal_totals(self) -> np.ndarray:
        """log of the path mass through each anti-diagonal t + u = n.

        Every alignment crosses each diagonal exactly once, so all entries
        equal the log-likelihood.
        """
        T, U1 = self.alpha.shape
        occ = self.alpha + self.beta
        out = []
        for n in range(T + U1 - 1):
            acc = LOG_ZERO
            for t in range(max(0, n - U1 + 1), min(T, n + 1)):
                acc = log_sum_exp(acc, occ[t, n - t])
            out.append(acc)
        return np.array(out)

    def frame_blank_totals(self) -> np.ndarray:
        """log of the blank-transition mass leaving each frame t."""
        T, U1 = self.alpha.shape
        out = []
        for t in range(T):
            acc = LOG_ZERO
            if t < T - 1:
                for u in range(U1):
                    acc = log_sum_exp(acc, self.alpha[t, u] + self.lp_blank[t, u] + self.beta[t + 1, u])
            else:
                acc = self.alpha[T - 1, U1 - 1] + self.lp_blank[T - 1, U1 - 1]
            out.append(acc)
        return np.array(out)


def alpha_beta(lattice: LogitLattice) -> AlignmentLattice:
    lp_blank, lp_label = lattice.blank_and_label()
    alpha, beta, ll = kernels.rnnt_alpha_beta(lp_blank, lp_label)
    return AlignmentLattice(alpha, beta, float(ll), lp_blank, lp_label)


def _occupancy_grads(lp_blank, lp_label, alpha, beta, ll):
    """d(-log P)/d lp for blank and label entries of one lattice."""
    T, U1 = lp_blank.shape
    beta_next = np.full((T, U1), LOG_ZERO)
    beta_next[:-1] = beta[1:]
    beta_next[-1, -1] = 0.0
    g_blank = -np.exp(alpha + lp_blank + beta_next - ll)
    if U1 > 1:
        g_label = -np.exp(alpha[:, :-1] + lp_label + beta[:, 1:] - ll)
    else:
        g_label = np.zeros((T, 0))
    return g_blank, g_label


def rnnt_loss(lattice: LogitLattice) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of the labels and its gradient w.r.t. the lattice entries."""
    ab = alpha_beta(lattice)
    g_blank, g_label = _occupancy_grads(ab.lp_blank, ab.lp_label, ab.alpha, ab.beta, ab.log_likelihood)
    grad = np.zeros(lattice.values.shape, dtype=np.float64)
    grad[:, :, lattice.blank_id] = g_blank
    if lattice.U:
        grad[:, np.arange(lattice.U), lattice.label_ids] += g_label
    return -ab.log_likelihood, grad


def brute_force_log_prob(lattice: LogitLattice) -> float:
    """log P(labels) by enumerating every alignment path (test oracle)."""
    T, U = lattice.T, lattice.U
    if T + U > MAX_BRUTE_FORCE:
        raise SizeError(f"T+U={T + U} exceeds the enumeration limit {MAX_BRUTE_FORCE}")
    v = lattice.values.astype(np.float64)
    total = LOG_ZERO
    steps = T + U - 1  # the final blank at (T-1, U) is forced
    for label_steps in itertools.combinations(range(steps), U):
        chosen = set(label_steps)
        t = u = 0
        score = 0.0
        for s in range(steps):
            if s in chosen:
                score += v[t, u, lattice.label_ids[u]]
                u += 1
            else:
                score += v[t, u, lattice.blank_id]
                t += 1
        score += v[T - 1, U, lattice.blank_id]
        total = log_sum_exp(total, score)
    return total


def rnnt_loss_batched(lattices: Sequence[LogitLattice]) -> tuple[float, list[np.ndarray]]:
    """Mean loss over utterances; per-utterance gradients of the summed loss."""
    if not lattices:
        raise ValueError("empty batch")
    losses, grads = [], []
    for lat in lattices:
        loss, grad = rnnt_loss(lat)
        losses.append(loss)
        grads.append(grad)
    return math.fsum(losses) / len(losses), grads


def transducer_loss(logp: Tensor, labels: np.ndarray, t_lens: Sequence[int], u_lens: Sequence[int],
                    blank_id: int = 0, reduction: str = "mean") -> Tensor:
    """Graph op over a padded batch of log-probability lattices.

    ``logp`` is B x T x (U+1) x K; item b uses ``logp[b, :t_lens[b], :u_lens[b]+1]``
    and ``labels[b, :u_lens[b]]``. Padding never enters the loss.
    """
    lp = logp.data
    B = lp.shape[0]
    grad = np.zeros(lp.shape, dtype=lp.dtype)
    losses = np.empty(B)
    for b in range(B):
        T, U = int(t_lens[b]), int(u_lens[b])
        if T < 1:
            raise ValueError(f"utterance {b} has no encoder frames")
        ys = np.asarray(labels[b, :U], dtype=np.int64)
        v = lp[b, :T, :U + 1].astype(np.float64)
        lp_blank = np.ascontiguousarray(v[:, :, blank_id])
        lp_label = np.ascontiguousarray(v[:, np.arange(U), ys]) if U else np.zeros((T, 0))
        alpha, beta, ll = kernels.rnnt_alpha_beta(lp_blank, lp_label)
        losses[b] = -ll
        g_blank, g_label = _occupancy_grads(lp_blank, lp_label, alpha, beta, ll)
        grad[b, :T, :U + 1, blank_id] = g_blank
        if U:
            grad[b, :T, np.arange(U), ys] += g_label.T
    scale = 1.0 / B if reduction == "mean" else 1.0
    total = losses.mean() if reduction == "mean" else losses.sum()

    def backward(g):
        logp._accumulate(grad * (float(g) * scale))

    out = Tensor._make(np.asarray(total, dtype=lp.dtype), (logp,), backward)
    out.name = "transducer_loss"
    return out


def per_utterance_losses(logp: np.ndarray, labels, t_lens, u_lens, blank_id: int = 0) -> np.ndarray:
    out = []
    for b in range(logp.shape[0]):
        T, U = int(t_lens[b]), int(u_lens[b])
        lat = LogitLattice(logp[b, :T, :U + 1], labels[b, :U], blank_id, validate=False)
        out.append(rnnt_loss(lat)[0])
    return np.array(out)
