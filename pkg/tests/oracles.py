"""Independent reference implementations the test suite checks against.

Each oracle is written in the most obviously-correct way available (plain
recursion, exhaustive sort, symmetric differences), sharing no code with the
library versions beyond the public data types.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

from entcorr.phonetics import similarity
from entcorr.repository import Entity, EntityRepository


def recursive_levenshtein(a: Sequence, b: Sequence) -> int:
    """Textbook memoized recursion, independent of the two-row DP."""
    a = tuple(a)
    b = tuple(b)

    @lru_cache(maxsize=None)
    def dist(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        step = 0 if a[i - 1] == b[j - 1] else 1
        return min(
            dist(i - 1, j - 1) + step,
            dist(i - 1, j) + 1,
            dist(i, j - 1) + 1,
        )

    return dist(len(a), len(b))


def full_rank(query: str, repo: EntityRepository) -> list[tuple[Entity, float]]:
    """Exhaustive (entity, probability) ranking with the documented tie-break.

    Probabilities are recomputed here from pairwise similarities: normalize
    when any similarity is positive, uniform otherwise.
    """
    query_ph = repo.romanize(query)
    sims = [(entity, similarity(entity.phonetic, query_ph)) for entity in repo]
    total = sum(s for _, s in sims)
    if total == 0.0:
        probs = [(entity, 1.0 / len(repo)) for entity, _ in sims]
    else:
        probs = [(entity, s / total) for entity, s in sims]
    return sorted(probs, key=lambda p: (-p[1], len(p[0].surface), p[0].surface))


def central_difference_gradient(
    fn: Callable[..., float], point: Sequence[float], h: float = 1e-6,
) -> list[float]:
    """Numeric gradient of fn at point, one coordinate at a time."""
    grads = []
    for i in range(len(point)):
        up = list(point)
        down = list(point)
        up[i] += h
        down[i] -= h
        grads.append((fn(*up) - fn(*down)) / (2.0 * h))
    return grads
