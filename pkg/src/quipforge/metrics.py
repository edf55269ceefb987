"""Adequacy and length metrics reported alongside quoting scores."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class RougeLScore:
    precision: float
    recall: float
    f1: float
    lcs_length: int


def _tokenize(text: str) -> list[str]:
    # lowercase + whitespace split, recorded in output metadata
    return text.lower().split()


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length via two-row dynamic programming."""
    if not a or not b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for ai in a:
        curr = [0]
        append = curr.append
        for j, bj in enumerate(b, start=1):
            if ai == bj:
                append(prev[j - 1] + 1)
            elif prev[j] >= curr[j - 1]:
                append(prev[j])
            else:
                append(curr[j - 1])
        prev = curr
    return prev[-1]


def rouge_l(hypothesis: str, reference: str, *, beta: float = 1.0) -> RougeLScore:
    """Rouge-L over lowercased whitespace tokens.

    precision = lcs/|hyp|, recall = lcs/|ref|. The default beta=1.0 gives
    the plain F1, computed as 2*lcs/(|hyp|+|ref|) which is algebraically
    identical and exact in floating point. beta != 1 selects the
    historical recall-weighted variant (1+b^2)PR / (R + b^2 P).
    Empty hypothesis or reference yields all zeros.
    """
    hyp = _tokenize(hypothesis)
    ref = _tokenize(reference)
    if not hyp or not ref:
        return RougeLScore(0.0, 0.0, 0.0, 0)
    lcs = lcs_length(hyp, ref)
    p = lcs / len(hyp)
    r = lcs / len(ref)
    if lcs == 0:
        f = 0.0
    elif beta == 1.0:
        f = 2 * lcs / (len(hyp) + len(ref))
    else:
        f = (1 + beta * beta) * p * r / (r + beta * beta * p)
    return RougeLScore(precision=p, recall=r, f1=f, lcs_length=lcs)


def length_stats(lengths: Sequence[int]) -> dict:
    """Mean, median, and 95th percentile of generation lengths.

    Median takes the lower of the two middles for even counts; p95 uses
    the nearest-rank rule (value at rank ceil(0.95 * n)).
    """
    if not lengths:
        raise ValueError("cannot compute statistics of an empty sequence")
    ordered = sorted(lengths)
    n = len(ordered)
    return {
        "mean": sum(ordered) / n,
        "median": ordered[(n - 1) // 2],
        "p95": ordered[max(0, math.ceil(0.95 * n) - 1)],
    }
