"""Edit-distance scoring with a deletion/insertion/substitution breakdown."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels


@dataclass(frozen=True)
class EditAlignment:
    deletions: int
    insertions: int
    substitutions: int
    correct: int
    reference_length: int

    @property
    def distance(self) -> int:
        return self.deletions + self.insertions + self.substitutions

    @property
    def error_rate(self) -> float:
        """(D+I+S)/N; infinite when the reference is empty and errors exist."""
        if self.reference_length == 0:
            return float("inf") if self.distance else 0.0
        return self.distance / self.reference_length

    @property
    def undefined_rate(self) -> bool:
        return self.reference_length == 0 and self.distance > 0

    def __add__(self, other: "EditAlignment") -> "EditAlignment":
        return EditAlignment(self.deletions + other.deletions, self.insertions + other.insertions,
                             self.substitutions + other.substitutions, self.correct + other.correct,
                             self.reference_length + other.reference_length)


def _ids(seq) -> np.ndarray:
    seq = list(seq)
    if seq and not all(isinstance(s, (int, np.integer)) for s in seq):
        # map arbitrary hashable tokens to ints
        table: dict = {}
        seq = [table.setdefault(s, len(table)) for s in seq]
    return np.asarray(seq, dtype=np.int64).reshape(-1)


def edit_align(reference: Sequence, hypothesis: Sequence) -> EditAlignment:
    """Unit-cost Levenshtein alignment.

    On ties the backtrace prefers the diagonal (match or substitution), then a
    deletion, then an insertion.
    """
    ref, hyp = list(reference), list(hypothesis)
    if ref or hyp:
        both = _ids(ref + hyp)
        r, h = both[:len(ref)], both[len(ref):]
    else:
        r = h = np.zeros(0, dtype=np.int64)
    d, i, s, c = kernels.edit_counts(np.ascontiguousarray(r), np.ascontiguousarray(h))
    return EditAlignment(int(d), int(i), int(s), int(c), len(ref))


@dataclass(frozen=True)
class CorpusReport:
    totals: EditAlignment
    utterances: int

    @property
    def error_rate(self) -> float:
        return self.totals.error_rate

    def percentages(self) -> tuple[float, float, float, float]:
        n = self.totals.reference_length
        if n == 0:
            inf = float("inf")
            return inf, inf, inf, inf
        t = self.totals
        return (100.0 * t.distance / n, 100.0 * t.deletions / n, 100.0 * t.insertions / n,
                100.0 * t.substitutions / n)

    def format(self) -> str:
        """``"CER (D/I/S)"`` in percent with two decimals, e.g. ``15.50 (0.71/0.26/14.53)``."""
        e, d, i, s = self.percentages()
        return f"{e:.2f} ({d:.2f}/{i:.2f}/{s:.2f})"

    def __str__(self) -> str:
        return self.format()

    def to_record(self) -> dict:
        t = self.totals
        return {"utterances": self.utterances, "reference_length": t.reference_length, "deletions": t.deletions,
                "insertions": t.insertions, "substitutions": t.substitutions, "correct": t.correct,
                "error_rate": t.error_rate, "formatted": self.format()}


def corpus_report(pairs: Iterable[tuple[Sequence, Sequence]]) -> CorpusReport:
    """Pool counts over all (reference, hypothesis) pairs."""
    total = EditAlignment(0, 0, 0, 0, 0)
    n = 0
    for ref, hyp in pairs:
        total = total + edit_align(ref, hyp)
        n += 1
    if n == 0:
        raise ValueError("corpus_report needs at least one pair")
    return CorpusReport(total, n)


__all__ = ["EditAlignment", "edit_align", "CorpusReport", "corpus_report"]
