import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascade_transducer import kernels
from cascade_transducer.metrics import EditAlignment, corpus_report, edit_align

seqs = st.lists(st.integers(0, 3), max_size=8)


def test_examples():
    assert edit_align("abc", "abc") == EditAlignment(0, 0, 0, 3, 3)
    a = edit_align("abc", "axc")
    assert (a.deletions, a.insertions, a.substitutions) == (0, 0, 1) and a.error_rate == pytest.approx(1 / 3)
    a = edit_align("abcd", "abd")
    assert (a.deletions, a.insertions, a.substitutions, a.error_rate) == (1, 0, 0, 0.25)


def test_empty_reference():
    a = edit_align([], [1, 2])
    assert a.insertions == 2 and a.reference_length == 0
    assert a.undefined_rate and a.error_rate == float("inf")
    assert edit_align([], []).error_rate == 0.0
    assert edit_align([1, 2], []).deletions == 2


def test_substitution_preferred_on_ties():
    # "ab" -> "ba": one substitution pair or delete+insert; both cost 2
    a = edit_align("ab", "ba")
    assert (a.substitutions, a.deletions, a.insertions) == (2, 0, 0)


@settings(max_examples=200, deadline=None)
@given(seqs, seqs)
def test_bookkeeping_and_bounds(r, h):
    a = edit_align(r, h)
    assert a.deletions + a.substitutions + a.correct == len(r)
    assert a.insertions + a.substitutions + a.correct == len(h)
    assert a.distance <= max(len(r), len(h))
    assert (a.distance == 0) == (r == h)
    assert a.distance == edit_align(h, r).distance


@settings(max_examples=100, deadline=None)
@given(seqs, seqs, seqs)
def test_triangle_inequality(a, b, c):
    d = lambda x, y: edit_align(x, y).distance
    assert d(a, c) <= d(a, b) + d(b, c)


def test_backends_agree():
    rng = np.random.default_rng(0)
    for _ in range(300):
        r = rng.integers(0, 4, size=rng.integers(0, 9)).astype(np.int64)
        h = rng.integers(0, 4, size=rng.integers(0, 9)).astype(np.int64)
        assert tuple(kernels.edit_counts(r, h)) == tuple(kernels._kernels_py.edit_counts(r, h))


def test_report_format_and_pooling():
    assert corpus_report([("abc", "abc")]).format() == "0.00 (0.00/0.00/0.00)"
    # pooled: (1 + 0) / (2 + 8) = 10%, whereas the mean of per-utterance rates would be 25%
    rep = corpus_report([("ab", "a"), ("abcdefgh", "abcdefgh")])
    assert rep.error_rate == pytest.approx(0.1)
    assert rep.format() == "10.00 (10.00/0.00/0.00)"
    import re
    assert re.fullmatch(r"\d+\.\d{2} \(\d+\.\d{2}/\d+\.\d{2}/\d+\.\d{2}\)", corpus_report([("abcd", "xbd")]).format())
    with pytest.raises(ValueError):
        corpus_report([])


def test_tokens_can_be_strings():
    assert edit_align(["ni3", "hao3"], ["ni3", "hao4"]).substitutions == 1
