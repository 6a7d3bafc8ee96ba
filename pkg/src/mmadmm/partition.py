"""Variable-partition heuristics for the two-super-block solvers.

Three strategies split the ``n`` blocks into super blocks ``B1`` (updated
first) and ``B2`` (updated second): a sort-and-scan heuristic minimizing the
combined parallelization penalty ``L_B1 + L_B2``, an orthogonality-based
split via two-coloring of the non-orthogonality graph, and a hybrid that
contracts orthogonal subgroups before scanning.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .blockspace import (
    BlockOperatorFamily,
    combined_op_norm_sq,
    gram_cross_is_zero,
)

__all__ = [
    "Partition",
    "case1_partition",
    "case1_scan",
    "case2_partition",
    "case3_partition",
]


@dataclass(frozen=True)
class Partition:
    """A two-super-block split of blocks ``0..n-1``.

    ``b1`` may be empty (the all-parallel degenerate case); ``b1`` and ``b2``
    are disjoint and together cover all blocks. ``score`` is the
    ``L_B1 + L_B2`` value for sort-and-scan partitions, ``None`` otherwise.
    ``case`` tags the originating strategy: ``I``, ``II``, ``III``, or
    ``user``.
    """

    b1: tuple
    b2: tuple
    case: str = "user"
    score: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "b1", tuple(self.b1))
        object.__setattr__(self, "b2", tuple(self.b2))
        overlap = set(self.b1) & set(self.b2)
        if overlap:
            raise ValueError(f"blocks {sorted(overlap)} appear in both super blocks")
        if len(set(self.b1)) != len(self.b1) or len(set(self.b2)) != len(self.b2):
            raise ValueError("duplicate block index inside a super block")

    @property
    def n(self) -> int:
        return len(self.b1) + len(self.b2)

    def covers(self, n: int) -> bool:
        return set(self.b1) | set(self.b2) == set(range(n))

    def side_of(self, i: int) -> int:
        """1 or 2 according to the super block holding block ``i``."""
        if i in self.b1:
            return 1
        if i in self.b2:
            return 2
        raise KeyError(f"block {i} is not in the partition")


def _penalty(count: int, norm_sum: float) -> float:
    return (count - 1) * norm_sum


def case1_scan(
    norms_sq: Sequence[float],
    A: Optional[BlockOperatorFamily] = None,
    footnote_max: int = 3,
) -> tuple:
    """Score every prefix split of the descending-norm order.

    Returns ``(order, scores)`` where ``order`` lists block indices sorted by
    norm descending (ties stable by index) and ``scores[k]`` is
    ``L_B1 + L_B2`` for ``n1 = k + 1``. ``L_B1`` uses
    ``(n1 - 1) * sum - ||A_B1||^2`` with the combined-norm refinement applied
    only when ``A`` is supplied and ``n1 <= footnote_max`` (the term is
    dropped for larger prefixes), and ``L_B2 = (n2 - 1) * sum``.
    """
    norms = [float(v) for v in norms_sq]
    n = len(norms)
    if n == 0:
        raise ValueError("at least one block norm is required")
    if any(v < 0 for v in norms):
        raise ValueError("squared norms must be nonnegative")
    order = sorted(range(n), key=lambda i: (-norms[i], i))
    total = sum(norms)
    scores = []
    prefix = 0.0
    for k, idx in enumerate(order):
        n1 = k + 1
        prefix += norms[idx]
        l_b1 = _penalty(n1, prefix)
        if A is not None and n1 <= footnote_max:
            l_b1 -= combined_op_norm_sq(A, order[:n1])
        l_b2 = _penalty(n - n1, total - prefix)
        scores.append(l_b1 + l_b2)
    return tuple(order), tuple(scores)


def case1_partition(
    norms_sq: Sequence[float],
    A: Optional[BlockOperatorFamily] = None,
) -> Partition:
    """Sort blocks by ``||A_i||_2^2`` descending and pick the best prefix.

    Scans ``n1 = 1..n`` over the sorted order and returns the split with the
    smallest ``L_B1 + L_B2`` (ties favor the smallest ``n1``).
    """
    if len(norms_sq) < 2:
        raise ValueError("partitioning needs at least two blocks")
    order, scores = case1_scan(norms_sq, A)
    best = min(range(len(scores)), key=lambda k: (scores[k], k))
    n1 = best + 1
    b1 = tuple(sorted(order[:n1]))
    b2 = tuple(sorted(order[n1:]))
    return Partition(b1, b2, case="I", score=scores[best])


def _nonorthogonality_edges(A: BlockOperatorFamily, tol: float) -> list:
    n = A.n
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if not gram_cross_is_zero(A.operators[i], A.operators[j], tol=tol):
                adj[i].add(j)
                adj[j].add(i)
    return adj


def case2_partition(
    A: BlockOperatorFamily, tol: float = 1e-10
) -> Optional[Partition]:
    """Two-color the non-orthogonality graph when it is bipartite.

    Blocks ``i`` and ``j`` are adjacent when ``A_i^T A_j != 0``. A valid
    two-coloring yields super blocks whose within-group cross Grams all
    vanish, so each phase solves its blocks exactly in parallel. Returns
    ``None`` when the graph contains an odd cycle. Isolated blocks are
    spread across the two sides to balance their sizes.
    """
    n = A.n
    if n < 2:
        raise ValueError("partitioning needs at least two blocks")
    adj = _nonorthogonality_edges(A, tol)
    color = [-1] * n
    sides = ([], [])
    for start in range(n):
        if color[start] >= 0:
            continue
        if not adj[start]:
            # Isolated block: place on the currently smaller side.
            side = 0 if len(sides[0]) <= len(sides[1]) else 1
            color[start] = side
            sides[side].append(start)
            continue
        component = {start: 0}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in sorted(adj[u]):
                if v not in component:
                    component[v] = component[u] ^ 1
                    queue.append(v)
                elif component[v] == component[u]:
                    return None
        # The class containing the component's lowest index goes to the
        # currently smaller side (ties to side 1).
        side = 0 if len(sides[0]) <= len(sides[1]) else 1
        for v, c in component.items():
            color[v] = side if c == 0 else side ^ 1
            sides[color[v]].append(v)
    return Partition(
        tuple(sorted(sides[0])), tuple(sorted(sides[1])), case="II"
    )


def case3_partition(A: BlockOperatorFamily, tol: float = 1e-10) -> Partition:
    """Contract orthogonal subgroups, then run the sort-and-scan heuristic.

    Greedily groups blocks into pairwise-orthogonal subgroups (first-fit in
    index order), keeps each subgroup whole inside one super block, and
    scores supernodes with norm equal to the largest member norm and an
    effective block count of one. When every subgroup is a singleton this
    reduces to the plain sort-and-scan heuristic on the original blocks.
    """
    n = A.n
    if n < 2:
        raise ValueError("partitioning needs at least two blocks")
    adj = _nonorthogonality_edges(A, tol)
    groups: list = []
    for i in range(n):
        placed = False
        for g in groups:
            if all(j not in adj[i] for j in g):
                g.append(i)
                placed = True
                break
        if not placed:
            groups.append([i])
    norms = [op.op_norm_sq for op in A.operators]
    if all(len(g) == 1 for g in groups):
        inner = case1_partition(norms, A)
        return Partition(inner.b1, inner.b2, case="III", score=inner.score)
    super_norms = [max(norms[i] for i in g) for g in groups]
    order, scores = case1_scan(super_norms)
    best = min(range(len(scores)), key=lambda k: (scores[k], k))
    b1: list = []
    b2: list = []
    for pos, g_idx in enumerate(order):
        (b1 if pos <= best else b2).extend(groups[g_idx])
    return Partition(
        tuple(sorted(b1)), tuple(sorted(b2)), case="III", score=scores[best]
    )
