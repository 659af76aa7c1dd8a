from typing import List, Sequence
import logging

import numpy as np

logger = logging.getLogger(__name__)

# Largest node count (depot included) solved exactly
EXACT_LIMIT = 13
SEED_COUNT = 5
MAX_SEGMENT = 3


def path_cost(matrix: np.ndarray, order: Sequence[int]) -> float:
    """Cost of an open path, summed left to right in visiting order"""
    total = 0.0
    for a, b in zip(order[:-1], order[1:]):
        total += float(matrix[a][b])
    return total


def held_karp(matrix: np.ndarray) -> List[int]:
    """
    Exact open-path ATSP from node 0 by dynamic programming over subsets.

    dp[mask, j] holds the cheapest path that starts at 0, visits exactly the
    nodes in mask and ends at j. Ties keep the lowest node index.
    """
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    if n <= 2:
        return list(range(n))
    k = n - 1
    full = (1 << k) - 1
    interior = m[1:, 1:]
    dp = np.full((1 << k, k), np.inf)
    parent = np.full((1 << k, k), -1, dtype=np.int64)
    for j in range(k):
        dp[1 << j, j] = m[0, j + 1]

    for mask in range(1, full + 1):
        if mask & (mask - 1) == 0:
            continue
        for j in range(k):
            bit = 1 << j
            if not mask & bit:
                continue
            prev = mask ^ bit
            candidates = dp[prev] + interior[:, j]
            i = int(np.argmin(candidates))
            if np.isfinite(candidates[i]):
                dp[mask, j] = candidates[i]
                parent[mask, j] = i

    last = int(np.argmin(dp[full]))
    order = []
    mask = full
    while last >= 0:
        order.append(last + 1)
        prev_last = int(parent[mask, last])
        mask ^= 1 << last
        last = prev_last
    return [0] + order[::-1]


def _nearest_neighbor(matrix: np.ndarray, first: int) -> List[int]:
    n = matrix.shape[0]
    order = [0, first]
    remaining = set(range(1, n)) - {first}
    while remaining:
        current = order[-1]
        nxt = min(remaining, key=lambda j: (matrix[current][j], j))
        order.append(nxt)
        remaining.remove(nxt)
    return order


def _route_cost(matrix: np.ndarray, route: List[int]) -> float:
    return path_cost(matrix, [0] + route)


def _two_opt_pass(matrix: np.ndarray, route: List[int], cost: float):
    n = len(route)
    for i in range(n - 1):
        for j in range(i + 1, n):
            candidate = route[:i] + route[i:j + 1][::-1] + route[j + 1:]
            candidate_cost = _route_cost(matrix, candidate)
            if candidate_cost < cost - 1e-12:
                return candidate, candidate_cost
    return None


def _or_opt_pass(matrix: np.ndarray, route: List[int], cost: float):
    n = len(route)
    for length in range(1, MAX_SEGMENT + 1):
        for i in range(n - length + 1):
            segment = route[i:i + length]
            rest = route[:i] + route[i + length:]
            for position in range(len(rest) + 1):
                if position == i:
                    continue
                candidate = rest[:position] + segment + rest[position:]
                candidate_cost = _route_cost(matrix, candidate)
                if candidate_cost < cost - 1e-12:
                    return candidate, candidate_cost
    return None


def local_search(matrix: np.ndarray, order: List[int]) -> List[int]:
    """2-opt then Or-opt with first improvement until neither move helps"""
    route = list(order[1:])
    cost = _route_cost(matrix, route)
    while True:
        move = _two_opt_pass(matrix, route, cost) or _or_opt_pass(matrix, route, cost)
        if move is None:
            return [0] + route
        route, cost = move


def heuristic_atsp(matrix: np.ndarray) -> List[int]:
    """Nearest-neighbor seeds from the cheapest first hops, each improved by local search"""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    if n <= 2:
        return list(range(n))
    first_hops = sorted(range(1, n), key=lambda j: (m[0][j], j))[:SEED_COUNT]
    best, best_cost = None, np.inf
    for first in first_hops:
        order = local_search(m, _nearest_neighbor(m, first))
        cost = path_cost(m, order)
        if cost < best_cost:
            best, best_cost = order, cost
    return best


def solve_atsp(matrix: np.ndarray, exact_limit: int = EXACT_LIMIT) -> List[int]:
    """
    Open Hamiltonian path from node 0 minimizing the summed entries.

    Exact below exact_limit nodes, local search otherwise; deterministic for
    a given matrix.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
        raise ValueError(f"expected a square matrix with n >= 2, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("cost matrix entries must be finite")
    if m.shape[0] <= exact_limit:
        return held_karp(m)
    order = heuristic_atsp(m)
    logger.debug(f"heuristic tour over {m.shape[0]} nodes, cost {path_cost(m, order):.3f}")
    return order
