"""ROUGE-N and ROUGE-L F1 over token sequences.

Empty inputs are not an error: the score is 0 and a
:class:`~airl_interp.errors.DegenerateInputWarning` is emitted.
"""

from __future__ import annotations

import warnings
from collections import Counter
from typing import NamedTuple, Sequence

from ..errors import DegenerateInputWarning


class RougeScore(NamedTuple):
    precision: float
    recall: float
    f1: float
    empty: bool = False


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n_score(candidate: Sequence, reference: Sequence, n: int = 1) -> RougeScore:
    if n not in (1, 2):
        raise ValueError(f"ROUGE-N supports n in {{1, 2}}, got {n}")
    if not candidate or not reference:
        return RougeScore(0.0, 0.0, 0.0, empty=True)
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    n_cand, n_ref = sum(cand.values()), sum(ref.values())
    if n_cand == 0 or n_ref == 0:
        # shorter than n: nothing to match
        return RougeScore(0.0, 0.0, 0.0)
    overlap = sum((cand & ref).values())
    p, r = overlap / n_cand, overlap / n_ref
    return RougeScore(p, r, _f1(p, r))


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length by the O(len(a) * len(b)) table."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_score(candidate: Sequence, reference: Sequence) -> RougeScore:
    if not candidate or not reference:
        return RougeScore(0.0, 0.0, 0.0, empty=True)
    lcs = lcs_length(candidate, reference)
    p, r = lcs / len(candidate), lcs / len(reference)
    return RougeScore(p, r, _f1(p, r))


def _warn_empty():
    warnings.warn("empty sequence passed to ROUGE; score is 0", DegenerateInputWarning, stacklevel=3)


def rouge_n(candidate: Sequence, reference: Sequence, n: int = 1) -> float:
    """ROUGE-N F1 with clipped n-gram counts."""
    score = rouge_n_score(candidate, reference, n)
    if score.empty:
        _warn_empty()
    return score.f1


def rouge_l(candidate: Sequence, reference: Sequence) -> float:
    """ROUGE-L F1 from the longest common subsequence."""
    score = rouge_l_score(candidate, reference)
    if score.empty:
        _warn_empty()
    return score.f1
