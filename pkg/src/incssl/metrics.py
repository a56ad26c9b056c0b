"""Edit distance, WER, CER and the three-way consensus score.

``edit_distance`` uses the bit-vector formulation of Levenshtein distance
(Myers 1999, Hyyrö 2001) so it stays fast on the hundreds of thousands of
hypothesis pairs a consensus filter scores; ``align`` runs the ordinary
quadratic table with a backtrace when the substitution / insertion /
deletion split is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence, Tuple

from .textnorm import char_tokens, normalize, word_tokens

__all__ = [
    "AlignmentCounts",
    "ConsensusScore",
    "align",
    "avg_pairwise_cer",
    "cer_pair",
    "corpus_wer",
    "edit_distance",
    "wer",
    "word_error_count",
]


@dataclass(frozen=True)
class AlignmentCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_len: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    def __add__(self, other: "AlignmentCounts") -> "AlignmentCounts":
        return AlignmentCounts(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_len + other.ref_len,
        )


@dataclass(frozen=True)
class ConsensusScore:
    mean_cer: float
    pair_cers: Tuple[float, float, float]


def edit_distance(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Unit-cost Levenshtein distance between two token sequences."""
    lo, hi_a, hi_b = 0, len(a), len(b)
    while lo < hi_a and lo < hi_b and a[lo] == b[lo]:
        lo += 1
    while hi_a > lo and hi_b > lo and a[hi_a - 1] == b[hi_b - 1]:
        hi_a -= 1
        hi_b -= 1
    a, b = a[lo:hi_a], b[lo:hi_b]
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    if m == 0:
        return len(a)

    peq: dict = {}
    for i, tok in enumerate(b):
        peq[tok] = peq.get(tok, 0) | (1 << i)

    mask = (1 << m) - 1
    high = 1 << (m - 1)
    pv, mv, score = mask, 0, m
    for tok in a:
        eq = peq.get(tok, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = (mv | ~(xh | pv)) & mask
        mh = pv & xh
        if ph & high:
            score += 1
        elif mh & high:
            score -= 1
        ph = ((ph << 1) | 1) & mask
        mh = (mh << 1) & mask
        pv = (mh | ~(xv | ph)) & mask
        mv = ph & xv
    return score


def align(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> AlignmentCounts:
    """Minimal-cost alignment of ``hyp`` against ``ref`` with S/I/D counts.

    Ties in the backtrace prefer a diagonal move (match or substitution),
    then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    if n == 0 or m == 0:
        return AlignmentCounts(0, m, n, n)

    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        cost[i][0] = i
    for j in range(m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        row, prev, r = cost[i], cost[i - 1], ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (r != hyp[j - 1])
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i][j] == cost[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return AlignmentCounts(subs, ins, dels, n)


def wer(ref: str, hyp: str) -> Tuple[float, AlignmentCounts]:
    """Word error rate of ``hyp`` against ``ref``.

    The denominator is ``max(1, ref_len)``, so an empty reference with a
    non-empty hypothesis scores the number of inserted words (and may exceed 1).
    """
    counts = align(word_tokens(normalize(ref)), word_tokens(normalize(hyp)))
    return counts.errors / max(1, counts.ref_len), counts


def cer_pair(a: str, b: str) -> float:
    """Symmetric CER between two hypotheses, normalised by the longer one."""
    ca, cb = char_tokens(normalize(a)), char_tokens(normalize(b))
    return edit_distance(ca, cb) / max(len(ca), len(cb), 1)


def avg_pairwise_cer(t1: str, t2: str, t3: str) -> ConsensusScore:
    n1, n2, n3 = (normalize(t).norm for t in (t1, t2, t3))

    def pair(x: str, y: str) -> float:
        if x == y:
            return 0.0
        return edit_distance(x, y) / max(len(x), len(y), 1)

    pairs = (pair(n1, n2), pair(n1, n3), pair(n2, n3))
    return ConsensusScore(mean_cer=math.fsum(pairs) / 3, pair_cers=pairs)


def corpus_wer(pairs: Iterable[Tuple[str, str]]) -> Tuple[float, AlignmentCounts]:
    """Corpus WER: total edits over total reference words."""
    total = AlignmentCounts()
    seen = False
    for ref, hyp in pairs:
        total = total + wer(ref, hyp)[1]
        seen = True
    if not seen:
        raise ValueError("corpus_wer needs at least one (ref, hyp) pair")
    return total.errors / max(1, total.ref_len), total


def word_error_count(ref: str, hyp: str) -> Tuple[int, int]:
    """(edits, ref_len) over word tokens; distance only, no S/I/D split."""
    r = word_tokens(normalize(ref))
    return edit_distance(r, word_tokens(normalize(hyp))), len(r)
