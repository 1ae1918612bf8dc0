"""Maximum-weight perfect bipartite matching (Kuhn-Munkres / Hungarian).

Scores are additive (log-probabilities in the tracker); ``-inf`` marks a
forbidden pair. Among all optimal matchings the one whose column sequence
(read by row) is lexicographically smallest is returned.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

_TIE_TOL = 1e-9
SMALL_N = 12


class InfeasibleMatching(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    matches: tuple[tuple[int, int], ...]
    total_weight: float

    def col_of(self) -> dict[int, int]:
        return dict(self.matches)


def _hungarian_min(cost: np.ndarray):
    """O(n^3) shortest-augmenting-path Hungarian method on a finite square cost.

    Returns (col_of_row, u, v) with u[i] + v[j] <= cost[i, j] everywhere and
    equality on matched pairs.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[p[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def _hungarian_min_small(cost):
    """Same algorithm on nested lists; faster than numpy for tiny matrices."""
    n = len(cost)
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = cost[i0 - 1]
            ui = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = [0] * n
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _lexicographic_refine(col_of_row: list[int], adj: list[list[int]]) -> list[int]:
    """Move to the lexicographically smallest perfect matching of the tight graph.

    Every perfect matching made of tight edges is optimal, so this only
    resolves ties. Row i is fixed greedily to its smallest tight column that
    still admits a perfect matching over the unfixed rows.
    """
    n = len(col_of_row)
    col_of_row = list(col_of_row)
    row_of_col = [0] * n
    for i, c in enumerate(col_of_row):
        row_of_col[c] = i
    for i in range(n):
        cur = col_of_row[i]
        for j in adj[i]:
            if j >= cur:
                break
            r = row_of_col[j]
            if r < i:
                continue
            # alternating path r -> ... -> column `cur`, avoiding fixed rows and row i
            prev = {r: -1}
            queue = deque([r])
            found = -1
            while queue and found < 0:
                a = queue.popleft()
                for c in adj[a]:
                    if c == j:
                        continue
                    if c == cur:
                        found = a
                        break
                    b = row_of_col[c]
                    if b <= i or b in prev:
                        continue
                    prev[b] = a
                    queue.append(b)
            if found < 0:
                continue
            # shift along the path: each row takes the column that led onward
            c = cur
            a = found
            while a != -1:
                nxt = col_of_row[a]
                col_of_row[a] = c
                row_of_col[c] = a
                c = nxt
                a = prev[a]
            col_of_row[i] = j
            row_of_col[j] = i
            break
    return col_of_row


def _solve_small(rows: list[list[float]]) -> Assignment:
    n = len(rows)
    finite = [x for r in rows for x in r if x != -math.inf]
    if not finite:
        raise InfeasibleMatching("every pair is forbidden")
    hi, lo = max(finite), min(finite)
    span = hi - lo
    big = (span + 1.0) * (n + 1)
    cost = [[hi - x if x != -math.inf else big for x in r] for r in rows]
    col_of_row, u, v = _hungarian_min_small(cost)
    if any(rows[i][c] == -math.inf for i, c in enumerate(col_of_row)):
        raise InfeasibleMatching("no perfect matching avoids forbidden pairs")
    tol = _TIE_TOL * max(1.0, span)
    adj = [
        [j for j in range(n) if rows[i][j] != -math.inf and cost[i][j] - u[i] - v[j] <= tol]
        for i in range(n)
    ]
    for i, c in enumerate(col_of_row):
        if c not in adj[i]:
            adj[i] = sorted(adj[i] + [c])
    col_of_row = _lexicographic_refine(col_of_row, adj)
    return Assignment(tuple(enumerate(col_of_row)), math.fsum(rows[i][c] for i, c in enumerate(col_of_row)))


def max_weight_matching(scores) -> Assignment:
    """Perfect matching maximising the sum of ``scores`` (square, -inf = forbidden)."""
    S = np.asarray(scores, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"score matrix must be square, got shape {S.shape}")
    n = S.shape[0]
    if n == 0:
        return Assignment((), 0.0)
    if np.isnan(S).any() or np.isposinf(S).any():
        raise ValueError("scores must be finite or -inf")
    if n <= SMALL_N:
        return _solve_small(S.tolist())
    allowed = np.isfinite(S)
    if not allowed.any():
        raise InfeasibleMatching("every pair is forbidden")
    finite = S[allowed]
    hi, lo = float(finite.max()), float(finite.min())
    span = hi - lo
    # a forbidden pair costs more than any complete all-allowed matching
    big = (span + 1.0) * (n + 1)
    cost = np.where(allowed, hi - S, big)
    col_of_row, u, v = _hungarian_min(cost)
    rows = np.arange(n)
    if not allowed[rows, col_of_row].all():
        raise InfeasibleMatching("no perfect matching avoids forbidden pairs")
    tol = _TIE_TOL * max(1.0, span)
    tight = allowed & (cost - u[:, None] - v[None, :] <= tol)
    # guard against dual drift: matched pairs are tight by construction
    tight[rows, col_of_row] = True
    col_of_row = _lexicographic_refine(col_of_row.tolist(), [np.flatnonzero(t).tolist() for t in tight])
    total = math.fsum(S[rows, col_of_row].tolist())
    return Assignment(tuple(enumerate(col_of_row)), total)
