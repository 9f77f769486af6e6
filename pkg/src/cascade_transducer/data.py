"""Vocabularies, the synthetic homophone language and corpus construction.

The toy language mimics the property the cascade relies on: every character
has exactly one syllable, several characters share a syllable, and which
homophone is written depends on the syllable before it. Paired (audio, text)
data never contains some syllable transitions; text-only data has them all,
so some character bigrams are only ever seen as text.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, VocabularyError
from .models import BLANK, EOS, SOS, UNK, Batch

log = logging.getLogger(__name__)

RESERVED = ("<blank>", "<s>", "</s>", "<unk>")

_ONSETS = ["b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "zh", "ch", "sh", "r", "z", "c", "s"]
_RIMES = ["a", "o", "e", "i", "u", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong"]


class Vocab:
    """Ordered token list; ids 0-3 are blank, start, end and unknown."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary tokens must be unique")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def lookup(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabularyError(f"unknown token {token!r}") from None

    def invert(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise VocabularyError(f"token id {idx} out of range for vocabulary of size {len(self.tokens)}")
        return self.tokens[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.invert(int(i)) for i in ids]

    @property
    def regular_ids(self) -> range:
        return range(len(RESERVED), len(self.tokens))

    def fingerprint(self) -> str:
        import hashlib
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()[:16]


@dataclass
class ToyLanguageSpec:
    n_syllables: int = 30
    tones: int = 3
    homophone_weights: tuple = (0.25, 0.45, 0.30)  # P(1, 2, 3 characters per syllable)
    fanout: int = 20  # successor syllables per syllable
    held_out: float = 0.3  # share of bigrams withheld from paired data
    min_len: int = 4
    max_len: int = 12
    feature_dim: int = 16
    frames: tuple = (2, 4)
    noise: float = 0.1
    tone_distance: float = 0.75
    seed: int = 0

    def __post_init__(self):
        self.homophone_weights = tuple(self.homophone_weights)
        self.frames = tuple(self.frames)
        if self.n_syllables < 2 or self.tones < 1:
            raise ConfigError("need at least two syllables and one tone")
        if len(self.homophone_weights) != 3 or not math.isclose(sum(self.homophone_weights), 1.0):
            raise ConfigError("homophone_weights must be three probabilities for 1, 2 or 3 characters")
        if not 0 <= self.held_out < 1:
            raise ConfigError("held_out must be in [0, 1)")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("sentence length bounds are inconsistent")
        if self.fanout < 2 or self.fanout >= self.n_syllables:
            raise ConfigError("fanout must be between 2 and n_syllables - 1")
        if self.frames[0] < 1 or self.frames[0] > self.frames[1]:
            raise ConfigError("frames must be an increasing positive range")


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray
    syllables: list
    characters: list


@dataclass
class TextPair:
    syllables: list
    characters: list
    origin: str = "normal"
    utt_id: str = ""


class ToyLanguage:
    """Concrete language drawn from a :class:`ToyLanguageSpec`."""

    def __init__(self, spec: ToyLanguageSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        n_bases = -(-spec.n_syllables // spec.tones)
        combos = [o + r for o in _ONSETS for r in _RIMES]
        bases = [combos[i] for i in sorted(rng.choice(len(combos), n_bases, replace=False))]
        names = [f"{b}{t + 1}" for b in bases for t in range(spec.tones)][:spec.n_syllables]
        self.syllable_vocab = Vocab(names)

        counts = rng.choice([1, 2, 3], size=spec.n_syllables, p=spec.homophone_weights)
        if counts.max() < 2:
            counts[np.argmax(counts == 1)] = 2
        chars, char_syl = [], []
        for s, n in enumerate(counts):
            for k in range(n):
                chars.append(f"{names[s]}_{k}")
                char_syl.append(s)
        self.char_vocab = Vocab(chars)
        off = len(RESERVED)
        # syllable id of every character id (reserved ids map to themselves)
        self.char_to_syl = np.arange(len(self.char_vocab))
        self.char_to_syl[off:] = np.array(char_syl) + off
        self.homophones = {s + off: [c + off for c, cs in enumerate(char_syl) if cs == s]
                           for s in range(spec.n_syllables)}
        self._build_bigrams(rng)

        fdim = spec.feature_dim
        base_vecs = rng.normal(size=(n_bases, fdim))
        tone_vecs = rng.normal(size=(spec.tones, fdim)) * spec.tone_distance / math.sqrt(2 * fdim)
        self.templates = np.zeros((len(self.syllable_vocab), fdim))
        for s in range(spec.n_syllables):
            self.templates[s + off] = base_vecs[s // spec.tones] + tone_vecs[s % spec.tones]

    def _build_bigrams(self, rng: np.random.Generator) -> None:
        """Character bigram tables for the paired and the full (text) language.

        Each syllable has a few successor syllables, and every transition picks
        which homophone of the successor is written. All homophones of a
        syllable share a row, so the written character depends on the syllable
        before it. Paired data lacks some transitions; for those the right
        character is only learnable from text.
        """
        spec, off = self.spec, len(RESERVED)
        S, V = spec.n_syllables, len(self.char_vocab)
        self.full = np.zeros((V, V))
        self.paired = np.zeros((V, V))
        starts = rng.dirichlet(np.ones(S))
        for s in range(S):
            homs = self.homophones[s + off]
            self.full[SOS, homs[int(rng.integers(len(homs)))]] = starts[s]
        self.paired[SOS] = self.full[SOS]
        for s in range(S):
            # a syllable never follows itself: repeated templates would be indistinguishable from one long syllable
            others = np.array([x for x in range(S) if x != s])
            succ = rng.choice(others, size=spec.fanout, replace=False)
            weights = rng.dirichlet(np.ones(spec.fanout))
            keep = rng.random(spec.fanout) >= spec.held_out
            keep[int(np.argmax(weights))] = True
            for x, w, k in zip(succ, weights, keep):
                homs = self.homophones[int(x) + off]
                c2 = homs[int(rng.integers(len(homs)))]
                for c in self.homophones[s + off]:
                    self.full[c, c2] = w
                    if k:
                        self.paired[c, c2] = w
        rows = list(self.char_vocab.regular_ids)
        self.paired[rows] /= self.paired[rows].sum(axis=1, keepdims=True)

    @property
    def n_characters(self) -> int:
        return len(self.char_vocab) - len(RESERVED)

    def syllables_of(self, chars: Sequence[int]) -> list[int]:
        return [int(self.char_to_syl[c]) for c in chars]

    def sample_sentence(self, rng: np.random.Generator, table: np.ndarray) -> list[int]:
        n = int(rng.integers(self.spec.min_len, self.spec.max_len + 1))
        out, prev = [], SOS
        for _ in range(n):
            row = table[prev]
            prev = int(rng.choice(len(row), p=row))
            out.append(prev)
        return out

    def synthesize(self, syllables: Sequence[int], rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.spec.frames
        frames = [np.repeat(self.templates[s][None], int(rng.integers(lo, hi + 1)), axis=0) for s in syllables]
        if not frames:
            return np.zeros((0, self.spec.feature_dim), dtype=np.float32)
        feats = np.concatenate(frames)
        feats = feats + rng.normal(scale=self.spec.noise, size=feats.shape)
        return feats.astype(np.float32)


def bigrams(chars: Sequence[int]) -> list[tuple[int, int]]:
    return list(zip(chars[:-1], chars[1:]))


@dataclass
class Corpus:
    language: ToyLanguage
    paired: list
    text: list
    dev: list
    test_matched: list
    test_novel: list
    stats: dict = field(default_factory=dict)

    @property
    def syllable_vocab(self) -> Vocab:
        return self.language.syllable_vocab

    @property
    def char_vocab(self) -> Vocab:
        return self.language.char_vocab


def generate_toy_corpus(spec: ToyLanguageSpec, n_paired: int, n_text_only: int, seed: int,
                        n_dev: int = 200, n_test: int = 300, min_novel: float = 0.3) -> Corpus:
    """Paired utterances, text-only pairs, a matched dev set and two test splits.

    The novel split keeps only sentences in which at least ``min_novel`` of the
    bigrams never occur in the paired training text.
    """
    if n_paired < 1 or n_text_only < 1 or n_dev < 1 or n_test < 1:
        raise ConfigError("corpus sizes must be positive")
    lang = ToyLanguage(spec)
    rng = np.random.default_rng(seed)

    def utterance(prefix: str, i: int, chars: list) -> Utterance:
        syls = lang.syllables_of(chars)
        return Utterance(f"{prefix}-{i:05d}", lang.synthesize(syls, rng), syls, chars)

    paired = [utterance("train", i, lang.sample_sentence(rng, lang.paired)) for i in range(n_paired)]
    seen = {bg for u in paired for bg in bigrams(u.characters)}
    text = []
    for i in range(n_text_only):
        chars = lang.sample_sentence(rng, lang.full)
        text.append(TextPair(lang.syllables_of(chars), chars, "normal", f"text-{i:06d}"))
    dev = [utterance("dev", i, lang.sample_sentence(rng, lang.paired)) for i in range(n_dev)]
    matched = [utterance("matched", i, lang.sample_sentence(rng, lang.paired)) for i in range(n_test)]
    novel = []
    attempts = 0
    while len(novel) < n_test:
        attempts += 1
        if attempts > 1000 * n_test:
            raise DataError("could not draw enough novel-bigram sentences; raise held_out")
        chars = lang.sample_sentence(rng, lang.full)
        bgs = bigrams(chars)
        if sum(bg not in seen for bg in bgs) >= min_novel * len(bgs):
            novel.append(utterance("novel", len(novel), chars))

    def novel_fraction(utts) -> float:
        bgs = [bg for u in utts for bg in bigrams(u.characters)]
        return sum(bg not in seen for bg in bgs) / max(1, len(bgs))

    text_bigrams = {bg for p in text for bg in bigrams(p.characters)}
    stats = {
        "paired_bigram_types": len(seen),
        "text_bigram_types": len(text_bigrams),
        "text_only_bigram_types": len(text_bigrams - seen),
        "novel_fraction_matched": round(novel_fraction(matched), 4),
        "novel_fraction_novel": round(novel_fraction(novel), 4),
        "ambiguous_syllables": sum(len(h) > 1 for h in lang.homophones.values()),
        "characters": lang.n_characters,
        "syllables": spec.n_syllables,
    }
    return Corpus(lang, paired, text, dev, matched, novel, stats)


def text_augment(pair: TextPair, p: float, rng, n_syllables: Optional[int] = None,
                 first_id: int = len(RESERVED)) -> TextPair:
    """Replace each syllable with probability ``p`` by a different, uniformly drawn one.

    ``rng`` is a numpy Generator or an integer seed. Syllable ids live in
    ``[first_id, first_id + n_syllables)``.
    """
    if not 0 <= p < 1:
        raise ConfigError("augmentation probability must be in [0, 1)")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    syls = list(pair.syllables)
    if n_syllables is None:
        raise ConfigError("n_syllables is required")
    if p > 0 and n_syllables > 1:
        hits = rng.random(len(syls)) < p
        for i in np.nonzero(hits)[0]:
            draw = int(rng.integers(n_syllables - 1)) + first_id
            if draw >= syls[i]:
                draw += 1
            syls[i] = draw
    return TextPair(syls, list(pair.characters), pair.origin, pair.utt_id)


def build_correction_set(acoustic, paired: Sequence[Utterance], max_symbols: int = 10) -> list[TextPair]:
    """Greedy-decode each paired utterance and keep (decoded syllables, gold characters)."""
    from .decode import greedy_decode

    out = []
    for utt in paired:
        syls = greedy_decode(acoustic, utt.features, max_symbols)
        if syls:
            out.append(TextPair(list(syls), list(utt.characters), "correction", utt.utt_id))
    return out


def mix_batches(normal: Sequence[TextPair], correction: Sequence[TextPair], ratio: int = 7,
                batch_size: int = 16, seed: int = 0) -> Iterator[list[TextPair]]:
    """Endless stream of batches holding ``ratio`` normal pairs per correction pair."""
    if ratio < 1:
        raise ConfigError("mix ratio must be at least 1")
    if not normal:
        raise DataError("no normal text pairs to mix")
    rng = np.random.default_rng(seed)
    n_corr = int(round(batch_size / (ratio + 1))) if correction else 0
    if not correction:
        log.warning("correction set is empty; streaming normal text only")
    n_norm = batch_size - n_corr
    norm_it = _cycle(normal, rng)
    corr_it = _cycle(correction, rng) if correction else None
    while True:
        batch = [next(norm_it) for _ in range(n_norm)]
        if corr_it is not None:
            batch += [next(corr_it) for _ in range(n_corr)]
        order = rng.permutation(len(batch))
        yield [batch[i] for i in order]


def _cycle(items: Sequence, rng: np.random.Generator):
    while True:
        for i in rng.permutation(len(items)):
            yield items[i]


def pad_sequences(seqs: Sequence, pad_value=0, dtype=None) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad 1-D id sequences or 2-D frame matrices; returns (array, lengths)."""
    lens = np.array([len(s) for s in seqs], dtype=np.int64)
    T = int(lens.max()) if len(seqs) else 0
    first = np.asarray(seqs[0]) if len(seqs) else np.zeros(0)
    if first.ndim == 2:
        out = np.full((len(seqs), T, first.shape[1]), pad_value, dtype=dtype or first.dtype)
    else:
        out = np.full((len(seqs), T), pad_value, dtype=dtype or np.int64)
    for i, s in enumerate(seqs):
        if len(s):
            out[i, :len(s)] = s
    return out, lens


def pad_batch(inputs: Sequence, targets: Sequence[Sequence[int]]) -> Batch:
    x, xl = pad_sequences(inputs)
    y, yl = pad_sequences([np.asarray(t, dtype=np.int64) for t in targets], dtype=np.int64)
    if y.ndim == 1:
        y = y.reshape(len(targets), 0)
    return Batch(x, xl, y, yl)


__all__ = [
    "BLANK", "SOS", "EOS", "UNK", "RESERVED", "Vocab", "ToyLanguageSpec", "ToyLanguage", "Utterance", "TextPair",
    "Corpus", "generate_toy_corpus", "text_augment", "build_correction_set", "mix_batches", "pad_batch",
    "pad_sequences", "bigrams",
]
