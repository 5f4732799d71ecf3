"""Lexicographic unranking of combinations and permutations."""

from __future__ import annotations

import math
from typing import Sequence, TypeVar

T = TypeVar("T")


def unrank_combination(n: int, k: int, rank: int) -> list[int]:
    """The ``rank``-th k-subset of range(n) in lexicographic order."""
    if not 0 <= rank < math.comb(n, k):
        raise ValueError(f"rank {rank} out of range for C({n}, {k})")
    chosen = []
    start = 0
    for slot in range(k):
        for c in range(start, n):
            count = math.comb(n - c - 1, k - slot - 1)
            if rank < count:
                chosen.append(c)
                start = c + 1
                break
            rank -= count
    return chosen


def unrank_permutation(items: Sequence[T], rank: int) -> list[T]:
    """The ``rank``-th ordering of ``items`` in lexicographic (index) order."""
    pool = list(items)
    if not 0 <= rank < math.factorial(len(pool)):
        raise ValueError(f"rank {rank} out of range for {len(pool)}!")
    out = []
    for i in range(len(pool), 0, -1):
        q, rank = divmod(rank, math.factorial(i - 1))
        out.append(pool.pop(q))
    return out
