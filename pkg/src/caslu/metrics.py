"""Edit distance and the error rates built on it (WER / PER / CER)."""

from __future__ import annotations


class UndefinedRateError(ValueError):
    """Raised when a rate is requested against an empty reference."""


def edit_distance(a, b):
    """Unit-cost Levenshtein distance from sequence a to sequence b.

    Returns (distance, substitutions, insertions, deletions) where the
    counts come from one canonical backtrace: on cost ties prefer a
    substitution over an insertion+deletion pair, and an insertion over
    a deletion. Always distance == subs + ins + dels.
    """
    a = list(a)
    b = list(b)
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1][j - 1] + (a[i - 1] != b[j - 1])
            d[i][j] = min(sub, d[i][j - 1] + 1, d[i - 1][j] + 1)

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and d[i][j] == d[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and d[i][j] == d[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return d[n][m], subs, ins, dels


def _rate(ref, hyp):
    ref = list(ref)
    if not ref:
        raise UndefinedRateError("error rate is undefined for an empty reference")
    return edit_distance(ref, hyp)[0] / len(ref)


def wer(ref, hyp):
    """Word error rate: edit distance over reference word count."""
    return _rate(ref, hyp)


def per(ref, hyp):
    """Phoneme error rate, same computation over phoneme tokens."""
    return _rate(ref, hyp)


def cer(ref, hyp):
    """Character error rate. Token sequences are space-joined first."""
    if not isinstance(ref, str):
        ref = " ".join(ref)
    if not isinstance(hyp, str):
        hyp = " ".join(hyp)
    return _rate(list(ref), list(hyp))
