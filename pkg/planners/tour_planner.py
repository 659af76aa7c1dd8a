from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
import math

import numpy as np
from scipy.sparse.csgraph import dijkstra

from errors import EmptyFrontierSet
from planners.atsp_solver import path_cost, solve_atsp
from planners.base_planner import BasePlanner, DroneState
from planners.path_search import coarsen, lattice_graph
from services.frontier_service import FrontierCluster, yaw_change
from services.grid_world import Box, CellState, Pose, VoxelGrid, segments_clear

SINGULAR_SPEED = 0.01


@dataclass(frozen=True)
class TourWeights:
    w_c: float = 1.5
    w_b: float = 0.2
    w_f: float = 3.0
    w_d: float = 1.0
    d_thr: Optional[float] = None
    h_max: float = 5.0
    v_max: float = 2.0
    yaw_rate_max: float = 1.0
    path_spacing: float = 0.4

    def validate(self) -> None:
        for name in ('w_c', 'w_b', 'w_f'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ('w_d', 'h_max', 'v_max', 'yaw_rate_max', 'path_spacing'):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.d_thr is not None and not self.d_thr > 0:
            raise ValueError("d_thr must be positive")


@dataclass
class CostMatrix:
    matrix: np.ndarray
    cluster_ids: List[int]

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass
class BottomRay:
    small_area_prob: float
    bottom_point: Optional[np.ndarray]
    depth: float
    enclosed: bool = False


@dataclass
class TourResult:
    sequence: List[int]
    cost: float
    matrix: CostMatrix

    @property
    def target(self) -> int:
        return self.sequence[0]


def boundary_distance(point, bounds: Box) -> float:
    """d_min: distance from a point to the nearer bounds face, minimized over axes"""
    p = np.asarray(point, dtype=float)
    per_axis = np.minimum(p - bounds.lo_array, bounds.hi_array - p)
    return float(max(per_axis.min(), 0.0))


def boundary_cost(average_point, bounds: Box, p0, viewpoint_position, sensor_range: float, w_d: float) -> float:
    """
    Boundary cost c_b of a frontier cluster.

    Near clusters (viewpoint closer than the sensor range) cost d_min; farther
    ones are penalized in proportion to how far beyond the range they lie.
    """
    d_min = boundary_distance(average_point, bounds)
    distance = float(np.linalg.norm(np.asarray(viewpoint_position, float) - np.asarray(p0, float)))
    if distance < sensor_range:
        return d_min
    return d_min * (1.0 + w_d * (distance - sensor_range) / sensor_range)


def _laterally_enclosed(cluster: FrontierCluster, grid: VoxelGrid, direction: np.ndarray) -> bool:
    planar = np.array([direction[0], direction[1]])
    norm = float(np.linalg.norm(planar))
    if norm < 1e-9:
        return False
    lateral = np.array([-planar[1], planar[0], 0.0]) / norm
    centers = grid.cell_centers(cluster.cells)
    projection = centers @ lateral
    occupied = grid.occupied_mask()

    def side_blocked(sign: float) -> bool:
        extreme = projection.max() if sign > 0 else projection.min()
        edge = centers[np.abs(projection - extreme) <= 0.5 * grid.resolution]
        for steps in (1, 2):
            samples = edge + sign * lateral * steps * grid.resolution
            idx, inside = grid.cells_of(samples)
            if np.any(inside & occupied[idx[:, 0], idx[:, 1], idx[:, 2]]):
                return True
        return False

    return side_blocked(1.0) and side_blocked(-1.0)


def bottom_ray(cluster: FrontierCluster, grid: VoxelGrid, h_max: float,
               viewpoint_position=None) -> BottomRay:
    """
    Estimate how small the unknown region behind a frontier is.

    A cluster walled in on both lateral sides counts as a small area outright.
    Otherwise a ray is marched from the average point away from the viewpoint
    through Unknown space, one voxel per step, until it meets a known cell,
    leaves the bounds or reaches h_max; c_s = (h_max - h) / h_max.
    """
    average = np.asarray(cluster.average_point, dtype=float)
    vp = cluster.best_viewpoint.p if viewpoint_position is None else np.asarray(viewpoint_position, float)
    offset = average - vp
    norm = float(np.linalg.norm(offset))
    if norm < 1e-9:
        return BottomRay(0.0, None, h_max)
    direction = offset / norm

    if _laterally_enclosed(cluster, grid, direction):
        return BottomRay(1.0, average.copy(), 0.0, enclosed=True)

    own = {tuple(c) for c in cluster.cells.tolist()}
    step = grid.resolution
    count = max(1, int(math.floor(h_max / step + 1e-9)))
    depth = h_max
    bottom = average + direction * h_max
    for k in range(1, count + 1):
        point = average + direction * (k * step)
        idx, inside = grid.cells_of(point)
        if not bool(inside):
            depth, bottom = k * step, point
            break
        cell = tuple(int(v) for v in idx)
        if cell in own:
            continue
        if grid.cells[cell] != CellState.UNKNOWN:
            depth, bottom = k * step, point
            break
    depth = min(depth, h_max)
    prob = float(np.clip((h_max - depth) / h_max, 0.0, 1.0))
    return BottomRay(prob, bottom, depth)


def velocity_direction_cost(p_k, p_0, v_0) -> float:
    """Angle in [0, pi] between the current velocity and the direction to the viewpoint"""
    v = np.asarray(v_0, dtype=float)
    d = np.asarray(p_k, dtype=float) - np.asarray(p_0, dtype=float)
    v_norm = float(np.linalg.norm(v))
    d_norm = float(np.linalg.norm(d))
    if v_norm < SINGULAR_SPEED or d_norm < 1e-9:
        return 0.0
    return float(np.arccos(np.clip(float(d @ v) / (d_norm * v_norm), -1.0, 1.0)))


def geodesic_lengths(grid: Optional[VoxelGrid], sources, targets, spacing: float = 0.4) -> np.ndarray:
    """
    Free-space path lengths from every source to every target.

    Pairs joined by a straight segment through Free cells get the euclidean
    distance. The rest share one Dijkstra run over a coarse lattice whose
    blocks are passable only when all their cells are Free, with the
    endpoint blocks always open. Unreachable pairs and points outside the
    bounds fall back to the euclidean distance.

    Returns:
        (len(sources), len(targets)) array, never below the euclidean distance
    """
    sources = np.asarray(sources, dtype=float).reshape(-1, 3)
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    euclidean = np.linalg.norm(sources[:, None, :] - targets[None, :, :], axis=-1)
    if grid is None or not len(sources) or not len(targets):
        return euclidean
    free = grid.free_mask()
    s_idx, s_in = grid.cells_of(sources)
    t_idx, t_in = grid.cells_of(targets)
    need = np.zeros(euclidean.shape, dtype=bool)
    for i, source in enumerate(sources):
        if s_in[i]:
            need[i] = t_in & ~segments_clear(grid, source, targets, ~free)
    need &= euclidean > 1e-9
    if not need.any():
        return euclidean

    factor = max(1, int(round(spacing / grid.resolution)))
    passable = coarsen(free, factor)
    s_cells = s_idx // factor
    t_cells = t_idx // factor
    passable[tuple(s_cells.T)] = True
    passable[tuple(t_cells.T)] = True
    lattice = lattice_graph(passable, grid.resolution * factor)
    rows = np.flatnonzero(need.any(axis=1))
    distances = dijkstra(lattice.graph, directed=True, indices=lattice.nodes(s_cells[rows]))
    geodesic = np.atleast_2d(distances)[:, lattice.nodes(t_cells)]

    lengths = euclidean.copy()
    block = lengths[rows]
    use = need[rows] & np.isfinite(geodesic)
    block[use] = np.maximum(geodesic[use], block[use])
    lengths[rows] = block
    return lengths


class PathLengthCache:
    def __init__(self):
        """
        Viewpoint-to-viewpoint path lengths kept per cluster id.

        A cluster's row is recomputed only when the cluster is new or its best
        viewpoint moved. Free space only grows, so a kept length can only
        overestimate the current one.
        """
        self._rows: Dict[int, Tuple[Tuple[float, float, float], Dict[int, float]]] = {}

    def __len__(self) -> int:
        return len(self._rows)

    def lengths(self, grid: Optional[VoxelGrid], clusters: Sequence[FrontierCluster], drone_position,
                spacing: float = 0.4) -> Tuple[np.ndarray, int]:
        """
        (n+1, n+1) path lengths with the drone as node 0, plus the number of
        cluster rows that had to be recomputed.
        """
        ids = [c.id for c in clusters]
        positions = [c.best_viewpoint.position for c in clusters]
        alive = set(ids)
        for cluster_id in [k for k in self._rows if k not in alive]:
            del self._rows[cluster_id]
        for _, row in self._rows.values():
            for cluster_id in [k for k in row if k not in alive]:
                del row[cluster_id]

        stale = [i for i, (k, p) in enumerate(zip(ids, positions))
                 if k not in self._rows or self._rows[k][0] != p]
        sources = [drone_position] + [positions[i] for i in stale]
        computed = geodesic_lengths(grid, sources, positions, spacing)
        for i in stale:
            self._rows[ids[i]] = (positions[i], {})
        for r, i in enumerate(stale, start=1):
            for j, other in enumerate(ids):
                if j != i:
                    self._rows[ids[i]][1][other] = float(computed[r, j])
                    self._rows[other][1][ids[i]] = float(computed[r, j])

        n = len(clusters)
        lengths = np.zeros((n + 1, n + 1))
        lengths[0, 1:] = computed[0]
        for i in range(n):
            row = self._rows[ids[i]][1]
            for j in range(n):
                if j != i:
                    lengths[i + 1, j + 1] = row[ids[j]]
        return lengths, len(stale)


def lower_bound_time(a: Pose, b: Pose, v_max: float, yaw_rate_max: float,
                     distance: Optional[float] = None) -> float:
    """max(path length / v_max, yaw change / yaw_rate_max); the straight distance unless one is given"""
    if distance is None:
        distance = float(np.linalg.norm(b.p - a.p))
    return max(distance / v_max, yaw_change(a.yaw, b.yaw) / yaw_rate_max)


def compute_frontier_costs(cluster: FrontierCluster, grid: VoxelGrid, p0, weights: TourWeights,
                           sensor_range: float) -> FrontierCluster:
    """Refresh c_b and c_s of a cluster against the drone position"""
    viewpoint = cluster.best_viewpoint
    d_thr = weights.d_thr if weights.d_thr is not None else 2.0 * sensor_range
    distance = float(np.linalg.norm(viewpoint.p - np.asarray(p0, dtype=float)))
    cluster.boundary_cost = boundary_cost(cluster.average_point, grid.bounds, p0, viewpoint.p,
                                          sensor_range, weights.w_d)
    if distance < d_thr:
        ray = bottom_ray(cluster, grid, weights.h_max)
        cluster.small_area_prob = ray.small_area_prob
        cluster.bottom_point = ray.bottom_point
    else:
        cluster.small_area_prob = 0.0
        cluster.bottom_point = None
    return cluster


def build_cost_matrix(clusters: Sequence[FrontierCluster], state: DroneState, weights: TourWeights,
                      lengths: Optional[np.ndarray] = None) -> CostMatrix:
    """
    ATSP cost matrix with the drone as node 0.

    Row 0 adds the velocity-direction, boundary and small-area terms to the
    lower-bound time; cluster-to-cluster entries are the symmetric lower-bound
    time only; column 0 is zero so the tour is an open path. `lengths` holds
    path lengths in the same node layout; straight distances are used without it.
    """
    if not clusters:
        raise EmptyFrontierSet("no active frontier clusters")
    n = len(clusters) + 1
    if lengths is None:
        points = np.vstack([state.position] + [c.best_viewpoint.p for c in clusters])
        lengths = geodesic_lengths(None, points, points)
    matrix = np.zeros((n, n))
    start = state.pose
    for k, cluster in enumerate(clusters, start=1):
        vp = cluster.best_viewpoint
        matrix[0, k] = (lower_bound_time(start, vp.pose, weights.v_max, weights.yaw_rate_max, lengths[0, k])
                        + weights.w_c * velocity_direction_cost(vp.p, state.position, state.velocity)
                        + weights.w_b * cluster.boundary_cost
                        - weights.w_f * cluster.small_area_prob)
    for i in range(1, n):
        for j in range(i + 1, n):
            cost = lower_bound_time(clusters[i - 1].best_viewpoint.pose, clusters[j - 1].best_viewpoint.pose,
                                    weights.v_max, weights.yaw_rate_max, lengths[i, j])
            matrix[i, j] = matrix[j, i] = cost
    return CostMatrix(matrix, [c.id for c in clusters])


class TourPlanner(BasePlanner):
    def __init__(self, grid: VoxelGrid, weights: TourWeights, sensor_range: float):
        """Frontier-level and flight-level costs plus the global sequence"""
        super().__init__()
        self.grid = grid
        self.weights = weights
        self.sensor_range = sensor_range
        self.cache = PathLengthCache()

    def refresh_costs(self, clusters: Sequence[FrontierCluster], p0) -> None:
        for cluster in clusters:
            compute_frontier_costs(cluster, self.grid, p0, self.weights, self.sensor_range)

    def plan(self, clusters: Sequence[FrontierCluster], state: DroneState) -> TourResult:
        """Global visiting order of the active clusters, as cluster ids"""
        if not clusters:
            raise EmptyFrontierSet("no active frontier clusters")
        lengths, recomputed = self.cache.lengths(self.grid, clusters, state.position, self.weights.path_spacing)
        matrix = build_cost_matrix(clusters, state, self.weights, lengths)
        order = solve_atsp(matrix.matrix)
        sequence = [matrix.cluster_ids[i - 1] for i in order[1:]]
        cost = path_cost(matrix.matrix, order)
        self.logger.debug(f"tour over {len(sequence)} clusters ({recomputed} new length rows), cost {cost:.3f}")
        return TourResult(sequence, cost, matrix)
