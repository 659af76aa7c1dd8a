from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
import itertools
import math

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

Cell = Tuple[int, int, int]

# One offset per undirected 26-connectivity edge
HALF_MOVES = [d for d in itertools.product((-1, 0, 1), repeat=3) if d > (0, 0, 0)]


@dataclass
class SearchResult:
    path: Optional[List[Cell]]
    expansions: int

    @property
    def found(self) -> bool:
        return self.path is not None


@dataclass
class LatticeGraph:
    graph: csr_matrix
    shape: Tuple[int, int, int]
    offset: np.ndarray

    def node(self, cell) -> int:
        local = np.asarray(cell, dtype=np.int64) - self.offset
        return int(np.ravel_multi_index(tuple(local), self.shape))

    def nodes(self, cells: np.ndarray) -> np.ndarray:
        local = np.asarray(cells, dtype=np.int64).reshape(-1, 3) - self.offset
        return np.ravel_multi_index(tuple(local.T), self.shape)

    def cell(self, node: int) -> Cell:
        local = np.unravel_index(int(node), self.shape)
        return tuple(int(v) for v in np.asarray(local) + self.offset)


def lattice_graph(passable: np.ndarray, spacing: float, offset: Sequence[int] = (0, 0, 0)) -> LatticeGraph:
    """
    Sparse 26-connected graph over the passable cells of a block.

    Edge weights are center-to-center distances. An edge exists when both
    of its cells are passable; impassable cells stay as isolated nodes.
    """
    passable = np.asarray(passable, dtype=bool)
    shape = passable.shape
    index = np.arange(passable.size, dtype=np.int64).reshape(shape)
    rows, cols, weights = [], [], []
    for move in HALF_MOVES:
        src = tuple(slice(max(0, -k), n - max(0, k)) for k, n in zip(move, shape))
        dst = tuple(slice(max(0, k), n - max(0, -k)) for k, n in zip(move, shape))
        both = passable[src] & passable[dst]
        a = index[src][both]
        b = index[dst][both]
        length = spacing * math.sqrt(sum(k * k for k in move))
        rows.extend((a, b))
        cols.extend((b, a))
        weights.append(np.full(2 * len(a), length))
    graph = csr_matrix((np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(passable.size, passable.size))
    return LatticeGraph(graph, shape, np.asarray(offset, dtype=np.int64))


def coarsen(passable: np.ndarray, factor: int) -> np.ndarray:
    """Blocks of factor^3 cells, passable only when every cell inside is; the ragged edge pads as passable"""
    if factor <= 1:
        return np.asarray(passable, dtype=bool)
    dims = np.asarray(passable.shape)
    padded_dims = -(-dims // factor) * factor
    padded = np.ones(tuple(padded_dims), dtype=bool)
    padded[:dims[0], :dims[1], :dims[2]] = passable
    coarse = padded_dims // factor
    blocks = padded.reshape(coarse[0], factor, coarse[1], factor, coarse[2], factor)
    return blocks.all(axis=(1, 3, 5))


def shortest_path(passable: np.ndarray, start: Cell, goal: Cell, resolution: float = 1.0,
                  lo: Optional[Tuple[int, int, int]] = None,
                  hi: Optional[Tuple[int, int, int]] = None) -> SearchResult:
    """
    Dijkstra over a boolean passability volume with 26-connectivity.

    The start and goal cells are always treated as passable. The search is
    confined to the index box [lo, hi) when given.

    Args:
        passable: Boolean volume, True where the search may enter
        start: Start cell index
        goal: Goal cell index
        resolution: Cell edge length, scales move costs
        lo: Inclusive lower corner of the search box
        hi: Exclusive upper corner of the search box

    Returns:
        SearchResult whose path runs start..goal inclusive, or None
    """
    start = tuple(int(v) for v in start)
    goal = tuple(int(v) for v in goal)
    if start == goal:
        return SearchResult([start], 0)
    lo = np.asarray(lo if lo is not None else (0, 0, 0), dtype=np.int64)
    hi = np.asarray(hi if hi is not None else passable.shape, dtype=np.int64)
    for cell in (start, goal):
        if np.any(np.asarray(cell) < lo) or np.any(np.asarray(cell) >= hi):
            return SearchResult(None, 0)
    block = np.array(passable[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]], dtype=bool)
    block[tuple(np.asarray(start) - lo)] = True
    block[tuple(np.asarray(goal) - lo)] = True
    lattice = lattice_graph(block, resolution, lo)
    source = lattice.node(start)
    target = lattice.node(goal)
    distances, predecessors = dijkstra(lattice.graph, directed=True, indices=source, return_predecessors=True)
    reached = int(np.count_nonzero(np.isfinite(distances)))
    if not np.isfinite(distances[target]):
        return SearchResult(None, reached)
    nodes = [target]
    while nodes[-1] != source:
        nodes.append(int(predecessors[nodes[-1]]))
    return SearchResult([lattice.cell(n) for n in reversed(nodes)], reached)


def polyline_length(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())
