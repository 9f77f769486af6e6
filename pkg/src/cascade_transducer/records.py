"""Plain-text record files.

vocab:      one token per line; the line number is the id, lines 0-3 reserved
corpus:     <utt-id> TAB <syllable tokens> TAB <character tokens> [TAB <feature ref>]
transcript: <utt-id> TAB <tokens> TAB <fused score>

Feature matrices live in one little-endian float32 file; a reference reads
``<file>:<byte offset>:<frames>:<dim>``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import RESERVED, Corpus, TextPair, Utterance, Vocab
from .errors import DataError

FEATURES_FILE = "features.f32"
SPLITS = ("paired", "dev", "test_matched", "test_novel")


def write_vocab(vocab: Vocab, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(vocab.tokens) + "\n")


def read_vocab(path: str) -> Vocab:
    try:
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
    except OSError as exc:
        raise DataError(f"cannot read vocabulary {path}: {exc}") from None
    if tuple(tokens[:4]) != RESERVED:
        raise DataError(f"{path}: first four lines must be {RESERVED}")
    if any(not t or " " in t or "\t" in t for t in tokens):
        raise DataError(f"{path}: tokens must be non-empty without whitespace")
    return Vocab(tokens)


@dataclass
class LoadedCorpus:
    syllable_vocab: Vocab
    char_vocab: Vocab
    paired: list = field(default_factory=list)
    text: list = field(default_factory=list)
    dev: list = field(default_factory=list)
    test_matched: list = field(default_factory=list)
    test_novel: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def write_corpus(corpus: Corpus, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_vocab(corpus.syllable_vocab, os.path.join(out_dir, "syllables.vocab"))
    write_vocab(corpus.char_vocab, os.path.join(out_dir, "characters.vocab"))
    sv, cv = corpus.syllable_vocab, corpus.char_vocab
    offset = 0
    with open(os.path.join(out_dir, FEATURES_FILE), "wb") as feats:
        for split in SPLITS:
            with open(os.path.join(out_dir, f"{split}.tsv"), "w", encoding="utf-8", newline="\n") as fh:
                for u in getattr(corpus, split):
                    raw = np.ascontiguousarray(u.features, dtype="<f4").tobytes()
                    feats.write(raw)
                    ref = f"{FEATURES_FILE}:{offset}:{u.features.shape[0]}:{u.features.shape[1]}"
                    offset += len(raw)
                    fh.write(_record(u.utt_id, sv.decode(u.syllables), cv.decode(u.characters), ref))
    with open(os.path.join(out_dir, "text.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        for p in corpus.text:
            fh.write(_record(p.utt_id, sv.decode(p.syllables), cv.decode(p.characters)))
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(corpus.stats, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _record(utt_id: str, syls: Sequence[str], chars: Sequence[str], ref: Optional[str] = None) -> str:
    fields = [utt_id, " ".join(syls), " ".join(chars)]
    if ref is not None:
        fields.append(ref)
    return "\t".join(fields) + "\n"


def _split_tokens(s: str) -> list[str]:
    return s.split(" ") if s else []


def read_records(path: str, syllable_vocab: Vocab, char_vocab: Vocab, base_dir: Optional[str] = None,
                 need_features: bool = False) -> list:
    """Utterances (when records carry features) or text pairs."""
    base_dir = base_dir or os.path.dirname(path)
    blobs: dict = {}
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) not in (3, 4):
                raise DataError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields")
            try:
                syls = syllable_vocab.encode(_split_tokens(parts[1]))
                chars = char_vocab.encode(_split_tokens(parts[2]))
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if len(parts) == 4:
                out.append(Utterance(parts[0], _load_features(parts[3], base_dir, blobs, path, lineno), syls, chars))
            elif need_features:
                raise DataError(f"{path}:{lineno}: record has no feature reference")
            else:
                out.append(TextPair(syls, chars, "normal", parts[0]))
    return out


def _load_features(ref: str, base_dir: str, blobs: dict, path: str, lineno: int) -> np.ndarray:
    try:
        name, off, frames, dim = ref.rsplit(":", 3)
        off, frames, dim = int(off), int(frames), int(dim)
    except ValueError:
        raise DataError(f"{path}:{lineno}: bad feature reference {ref!r}") from None
    if name not in blobs:
        fpath = os.path.join(base_dir, name)
        try:
            blobs[name] = np.fromfile(fpath, dtype="<f4")
        except OSError as exc:
            raise DataError(f"cannot read feature file {fpath}: {exc}") from None
    blob = blobs[name]
    start = off // 4
    if off % 4 or start + frames * dim > blob.size:
        raise DataError(f"{path}:{lineno}: feature reference {ref!r} out of range")
    return blob[start:start + frames * dim].reshape(frames, dim).astype(np.float32)


def read_corpus(data_dir: str) -> LoadedCorpus:
    sv = read_vocab(os.path.join(data_dir, "syllables.vocab"))
    cv = read_vocab(os.path.join(data_dir, "characters.vocab"))
    out = LoadedCorpus(sv, cv)
    for split in SPLITS:
        setattr(out, split, read_records(os.path.join(data_dir, f"{split}.tsv"), sv, cv, data_dir, need_features=True))
    out.text = read_records(os.path.join(data_dir, "text.tsv"), sv, cv, data_dir)
    report = os.path.join(data_dir, "report.json")
    if os.path.exists(report):
        with open(report, encoding="utf-8") as fh:
            out.stats = json.load(fh)
    return out


def write_transcripts(rows: Iterable[tuple[str, Sequence[str], float]], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt_id, tokens, score in rows:
            fh.write(f"{utt_id}\t{' '.join(tokens)}\t{score:.6f}\n")


def read_transcripts(path: str) -> dict[str, list[str]]:
    """utt-id -> tokens. Accepts transcript records or corpus records (characters column)."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) == 3 and _is_float(parts[2]):
                out[parts[0]] = _split_tokens(parts[1])
            elif len(parts) in (3, 4):
                out[parts[0]] = _split_tokens(parts[2])
            else:
                raise DataError(f"{path}:{lineno}: cannot parse record")
    return out


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


__all__ = ["write_vocab", "read_vocab", "write_corpus", "read_corpus", "read_records", "LoadedCorpus",
           "write_transcripts", "read_transcripts", "FEATURES_FILE"]
