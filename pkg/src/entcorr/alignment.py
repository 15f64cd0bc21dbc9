"""Unit-cost sequence alignment with a fixed tie-break.

All CER-family metrics and the tag-transfer logic sit on top of this one
alignment; determinism matters more than speed here, so ties are always
resolved in the order match > substitution > deletion > insertion during
backtrace.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence


class OpKind(Enum):
    MATCH = "match"
    SUBSTITUTE = "substitute"
    INSERT = "insert"
    DELETE = "delete"


@dataclass(frozen=True)
class AlignmentOp:
    """One alignment step.

    ``ref_index`` is None for insertions (the op consumes no reference
    character); ``hyp_index`` is None for deletions.
    """

    kind: OpKind
    ref_index: int | None
    hyp_index: int | None


def align(ref: Sequence, hyp: Sequence) -> list[AlignmentOp]:
    """Minimal-cost alignment of ``hyp`` onto ``ref``.

    The returned ops visit every reference and hypothesis element exactly
    once, in order.  Empty inputs are allowed.
    """
    n, m = len(ref), len(hyp)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1][j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            cost[i][j] = min(sub, cost[i - 1][j] + 1, cost[i][j - 1] + 1)

    ops: list[AlignmentOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        here = cost[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and here == cost[i - 1][j - 1]:
            ops.append(AlignmentOp(OpKind.MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and here == cost[i - 1][j - 1] + 1:
            ops.append(AlignmentOp(OpKind.SUBSTITUTE, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and here == cost[i - 1][j] + 1:
            ops.append(AlignmentOp(OpKind.DELETE, i - 1, None))
            i -= 1
        else:
            ops.append(AlignmentOp(OpKind.INSERT, None, j - 1))
            j -= 1
    ops.reverse()
    return ops


def alignment_cost(ops: Sequence[AlignmentOp]) -> int:
    return sum(1 for op in ops if op.kind is not OpKind.MATCH)
