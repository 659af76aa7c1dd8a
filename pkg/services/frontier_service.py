from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import pdist
from sklearn.decomposition import PCA

from errors import NoViewpoint
from services.grid_world import Box, CellState, Pose, SensorModel, VoxelGrid, segments_clear, wrap_angle

logger = logging.getLogger(__name__)

FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)
FULL_CONNECTIVITY = ndimage.generate_binary_structure(3, 3)

# Above this many cells the bbox diagonal stands in for the exact extent
MAX_EXACT_EXTENT_CELLS = 2000


@dataclass(frozen=True)
class Viewpoint:
    position: Tuple[float, float, float]
    yaw: float
    coverage: int
    cluster_id: int = -1

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)

    @property
    def pose(self) -> Pose:
        return Pose(self.position, self.yaw)

    def to_dict(self) -> Dict[str, Any]:
        return {'position': [round(v, 6) for v in self.position], 'yaw': round(self.yaw, 6),
                'coverage': self.coverage}


@dataclass
class FrontierCluster:
    id: int
    cells: np.ndarray
    average_point: np.ndarray
    viewpoints: List[Viewpoint] = field(default_factory=list)
    boundary_cost: float = 0.0
    small_area_prob: float = 0.0
    bottom_point: Optional[np.ndarray] = None
    dirty: bool = True
    dormant: bool = False

    @property
    def best_viewpoint(self) -> Optional[Viewpoint]:
        return self.viewpoints[0] if self.viewpoints else None

    @property
    def active(self) -> bool:
        return not self.dormant and bool(self.viewpoints)

    @property
    def size(self) -> int:
        return int(len(self.cells))

    @property
    def key(self) -> bytes:
        """Identity of the cell set; cells are kept lexicographically sorted"""
        return self.cells.tobytes()

    def index_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.cells.min(axis=0), self.cells.max(axis=0) + 1

    def to_record(self, t: float) -> Dict[str, Any]:
        best = self.best_viewpoint
        return {
            't': round(t, 6),
            'id': self.id,
            'cells': self.size,
            'average_point': [round(float(v), 6) for v in self.average_point],
            'best_viewpoint': best.to_dict() if best else None,
            'c_b': round(self.boundary_cost, 6),
            'c_s': round(self.small_area_prob, 6),
            'dormant': self.dormant,
        }


@dataclass(frozen=True)
class ViewpointParams:
    radii: Tuple[float, ...] = (1.0, 1.8, 2.6)
    azimuth_steps: int = 12
    height_offsets: Tuple[float, ...] = (-0.3, 0.0, 0.3)
    inflation: float = 0.3
    min_coverage: int = 3
    coverage_fraction: float = 0.2
    tie_tier: float = 0.9
    lambda_vp: float = 0.5
    coverage_samples: int = 50


def sort_cells(cells: np.ndarray) -> np.ndarray:
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
    if len(cells) == 0:
        return cells
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
    return cells[order]


def _frontier_block(grid: VoxelGrid, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    if np.any(hi <= lo):
        return np.empty((0, 3), dtype=np.int64)
    dims = np.asarray(grid.dims)
    plo = np.maximum(lo - 1, 0)
    phi = np.minimum(hi + 1, dims)
    block = grid.cells[plo[0]:phi[0], plo[1]:phi[1], plo[2]:phi[2]]
    unknown = block == CellState.UNKNOWN
    near_unknown = ndimage.binary_dilation(unknown, structure=FACE_CONNECTIVITY)
    frontier = (block == CellState.FREE) & near_unknown
    offset = lo - plo
    size = hi - lo
    frontier = frontier[offset[0]:offset[0] + size[0], offset[1]:offset[1] + size[1],
                        offset[2]:offset[2] + size[2]]
    return sort_cells(np.argwhere(frontier) + lo)


def detect_frontiers(grid: VoxelGrid, changed_region: Optional[Box] = None) -> np.ndarray:
    """
    Free cells with at least one face-adjacent Unknown neighbor.

    Args:
        grid: Occupancy map
        changed_region: World box restricting the scan; None scans the whole grid

    Returns:
        (N, 3) array of cell indices, lexicographically sorted
    """
    if changed_region is None:
        lo, hi = np.zeros(3, dtype=int), np.asarray(grid.dims)
    else:
        lo, hi = grid.index_range(changed_region)
    return _frontier_block(grid, lo, hi)


def cluster_extent(centers: np.ndarray) -> float:
    """Max pairwise distance between cell centers"""
    if len(centers) < 2:
        return 0.0
    diagonal = float(np.linalg.norm(centers.max(axis=0) - centers.min(axis=0)))
    if len(centers) > MAX_EXACT_EXTENT_CELLS:
        return diagonal
    return float(pdist(centers).max())


def _split(cells: np.ndarray, centers: np.ndarray, max_extent: float) -> List[np.ndarray]:
    if cluster_extent(centers) <= max_extent:
        return [cells]
    pca = PCA(n_components=1, svd_solver='full')
    pca.fit(centers)
    projection = (centers - centers.mean(axis=0)) @ pca.components_[0]
    lower = projection < 0.0
    if lower.all() or not lower.any():
        return [cells]
    return (_split(cells[lower], centers[lower], max_extent)
            + _split(cells[~lower], centers[~lower], max_extent))


def cluster_frontiers(cells: np.ndarray, grid: VoxelGrid, max_extent: float = 2.0,
                      start_id: int = 0) -> List[FrontierCluster]:
    """
    Group frontier cells into 26-connected components, then split any
    component wider than max_extent by a plane through its centroid normal to
    its principal axis, recursively.
    """
    cells = sort_cells(cells)
    if len(cells) == 0:
        return []
    lo = cells.min(axis=0)
    hi = cells.max(axis=0) + 1
    mask = np.zeros(tuple(hi - lo), dtype=bool)
    local = cells - lo
    mask[local[:, 0], local[:, 1], local[:, 2]] = True
    labels, count = ndimage.label(mask, structure=FULL_CONNECTIVITY)
    cell_labels = labels[local[:, 0], local[:, 1], local[:, 2]]

    groups: List[np.ndarray] = []
    for label in range(1, count + 1):
        component = cells[cell_labels == label]
        groups.extend(_split(component, grid.cell_centers(component), max_extent))

    groups = sorted((sort_cells(g) for g in groups), key=lambda g: tuple(g[0]))
    clusters = []
    for offset, group in enumerate(groups):
        clusters.append(FrontierCluster(
            id=start_id + offset,
            cells=group,
            average_point=grid.cell_centers(group).mean(axis=0),
        ))
    return clusters


def yaw_change(a: float, b: float) -> float:
    """Minor-arc angle between two yaws, in [0, pi]"""
    d = abs(float(a) - float(b)) % (2.0 * math.pi)
    return min(d, 2.0 * math.pi - d)


def select_best_viewpoint(viewpoints: Sequence[Viewpoint], current: Pose,
                          params: ViewpointParams = ViewpointParams()) -> List[Viewpoint]:
    """Move the cheapest viewpoint of the top coverage tier to the front"""
    if not viewpoints:
        return []
    ordered = sorted(viewpoints, key=lambda v: -v.coverage)
    top = ordered[0].coverage
    tier = [v for v in ordered if v.coverage >= params.tie_tier * top]
    current_p = current.p

    def motion_cost(v: Viewpoint) -> float:
        return yaw_change(current.yaw, v.yaw) + params.lambda_vp * float(np.linalg.norm(v.p - current_p))

    best = min(tier, key=motion_cost)
    return [best] + [v for v in ordered if v is not best]


def sample_viewpoints(cluster: FrontierCluster, grid: VoxelGrid, sensor: SensorModel, current: Pose,
                      params: ViewpointParams = ViewpointParams()) -> List[Viewpoint]:
    """
    Sample candidate viewpoints on a cylindrical lattice around the cluster's
    average point and keep those seeing enough of the cluster.

    Coverage is an estimate: at most `coverage_samples` cluster cells, taken
    at a fixed stride over the sorted cells, are ray-cast and the visible
    count is scaled back up to the cluster size. The same cluster and map
    always give the same coverage.

    Returns:
        Viewpoints with the best one first, the rest by descending coverage

    Raises:
        NoViewpoint: every sample was rejected
    """
    center = np.asarray(cluster.average_point, dtype=float)
    occupied = grid.occupied_mask()
    inflated = grid.inflated_occupied(params.inflation)
    z_lo = grid.bounds.lo[2] + 0.5 * grid.resolution
    z_hi = grid.bounds.hi[2] - 0.5 * grid.resolution

    samples = []
    for radius in params.radii:
        for step in range(params.azimuth_steps):
            angle = 2.0 * math.pi * step / params.azimuth_steps
            for dz in params.height_offsets:
                z = min(max(center[2] + dz, z_lo), z_hi)
                samples.append((center[0] + radius * math.cos(angle), center[1] + radius * math.sin(angle), z))
    samples = np.asarray(samples, dtype=float)

    idx, inside = grid.cells_of(samples)
    states = grid.state_at(idx)
    ok = inside & (states == CellState.FREE) & ~inflated[idx[:, 0], idx[:, 1], idx[:, 2]]
    if grid.bounds.contains(center):
        candidates = samples[ok]
        ok_visible = segments_clear(grid, center, candidates, occupied) if len(candidates) else np.zeros(0, bool)
        candidates = candidates[ok_visible]
    else:
        candidates = np.empty((0, 3))

    n_cells = cluster.size
    stride = max(1, int(math.ceil(n_cells / params.coverage_samples)))
    targets = grid.cell_centers(cluster.cells[::stride])
    scale = n_cells / len(targets)
    threshold = max(params.min_coverage, params.coverage_fraction * n_cells)

    viewpoints: List[Viewpoint] = []
    for position in candidates:
        heading = math.atan2(center[1] - position[1], center[0] - position[0])
        yaw = float(wrap_angle(heading))
        in_view = sensor.in_fov(position, yaw, targets)
        if not in_view.any():
            continue
        visible = np.zeros(len(targets), dtype=bool)
        visible[in_view] = segments_clear(grid, position, targets[in_view], occupied)
        coverage = int(round(np.count_nonzero(visible) * scale))
        if coverage >= threshold and coverage >= 1:
            viewpoints.append(Viewpoint(tuple(float(v) for v in position), yaw, coverage, cluster.id))

    if not viewpoints:
        raise NoViewpoint(f"cluster {cluster.id} ({n_cells} cells) has no valid viewpoint")
    return select_best_viewpoint(viewpoints, current, params)


def valid_viewpoints(viewpoints: Sequence[Viewpoint], grid: VoxelGrid, inflation: float) -> List[Viewpoint]:
    """Viewpoints still standing in Free space outside the obstacle inflation, order kept"""
    if not viewpoints:
        return []
    idx, inside = grid.cells_of(np.array([vp.position for vp in viewpoints], dtype=float))
    ok = inside & (grid.state_at(idx) == CellState.FREE)
    ok &= ~grid.inflated_occupied(inflation)[idx[:, 0], idx[:, 1], idx[:, 2]]
    return [vp for vp, keep in zip(viewpoints, ok) if keep]


@dataclass
class FrontierUpdate:
    removed: List[int] = field(default_factory=list)
    added: List[int] = field(default_factory=list)
    reused: List[int] = field(default_factory=list)


class FrontierStore:
    def __init__(self, grid: VoxelGrid, sensor: SensorModel,
                 params: ViewpointParams = ViewpointParams(), max_extent: float = 2.0):
        """Incrementally maintained set of frontier clusters for one map"""
        self.grid = grid
        self.sensor = sensor
        self.params = params
        self.max_extent = max_extent
        self.clusters: Dict[int, FrontierCluster] = {}
        self._owner = np.full(grid.dims, -1, dtype=np.int64)
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.clusters)

    def frontier_cells(self) -> np.ndarray:
        return sort_cells(np.argwhere(self._owner >= 0))

    def active_clusters(self) -> List[FrontierCluster]:
        return [self.clusters[k] for k in sorted(self.clusters) if self.clusters[k].active]

    def dormant_clusters(self) -> List[FrontierCluster]:
        return [self.clusters[k] for k in sorted(self.clusters) if self.clusters[k].dormant]

    def cluster_of(self, cell) -> Optional[int]:
        owner = int(self._owner[tuple(cell)])
        return owner if owner >= 0 else None

    def still_frontier(self, cells: np.ndarray) -> np.ndarray:
        cells = np.asarray(cells).reshape(-1, 3)
        return self._owner[cells[:, 0], cells[:, 1], cells[:, 2]] >= 0

    def _remove(self, cluster_id: int) -> FrontierCluster:
        cluster = self.clusters.pop(cluster_id)
        self._owner[cluster.cells[:, 0], cluster.cells[:, 1], cluster.cells[:, 2]] = -1
        return cluster

    def _insert(self, cluster: FrontierCluster) -> None:
        self.clusters[cluster.id] = cluster
        self._owner[cluster.cells[:, 0], cluster.cells[:, 1], cluster.cells[:, 2]] = cluster.id

    def rebuild(self) -> FrontierUpdate:
        """Recompute every cluster from the whole grid"""
        return self.update(self.grid.bounds)

    def update(self, changed_region: Optional[Box]) -> FrontierUpdate:
        """
        Delete clusters touching the changed region, re-detect frontier cells
        there and re-cluster them. Clusters elsewhere are left untouched; a
        re-detected cluster with the same cells as a removed one keeps its id.
        """
        result = FrontierUpdate()
        if changed_region is None:
            return result
        dims = np.asarray(self.grid.dims)
        lo, hi = self.grid.index_range(changed_region, margin_cells=1)
        if np.any(hi <= lo):
            return result

        window = self._owner[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        affected = [int(k) for k in np.unique(window) if k >= 0]
        removed: Dict[bytes, FrontierCluster] = {}
        scan_lo, scan_hi = lo.copy(), hi.copy()
        for cluster_id in affected:
            cluster = self._remove(cluster_id)
            removed[cluster.key] = cluster
            c_lo, c_hi = cluster.index_bounds()
            scan_lo = np.minimum(scan_lo, c_lo)
            scan_hi = np.maximum(scan_hi, c_hi)
        scan_hi = np.minimum(scan_hi, dims)

        detected = _frontier_block(self.grid, scan_lo, scan_hi)
        if len(detected):
            fresh = self._owner[detected[:, 0], detected[:, 1], detected[:, 2]] < 0
            detected = detected[fresh]

        # Retained clusters touching new cells are merged into the re-clustering
        if len(detected):
            touch = np.zeros(self.grid.dims, dtype=bool)
            touch[detected[:, 0], detected[:, 1], detected[:, 2]] = True
            b_lo = np.maximum(detected.min(axis=0) - 1, 0)
            b_hi = np.minimum(detected.max(axis=0) + 2, dims)
            sub = ndimage.binary_dilation(touch[b_lo[0]:b_hi[0], b_lo[1]:b_hi[1], b_lo[2]:b_hi[2]],
                                          structure=FULL_CONNECTIVITY)
            neighbors = self._owner[b_lo[0]:b_hi[0], b_lo[1]:b_hi[1], b_lo[2]:b_hi[2]][sub]
            for cluster_id in sorted(int(k) for k in np.unique(neighbors) if k >= 0):
                cluster = self._remove(cluster_id)
                removed[cluster.key] = cluster
                affected.append(cluster_id)
                detected = np.vstack([detected, cluster.cells])

        for cluster in cluster_frontiers(detected, self.grid, self.max_extent):
            previous = removed.pop(cluster.key, None)
            if previous is not None:
                # Map changed near it, so a dormant cluster gets another sampling pass
                previous.dirty = previous.dirty or previous.dormant
                kept = valid_viewpoints(previous.viewpoints, self.grid, self.params.inflation)
                if len(kept) < len(previous.viewpoints):
                    previous.viewpoints = kept
                    previous.dirty = True
                self._insert(previous)
                result.reused.append(previous.id)
                continue
            cluster.id = self._next_id
            self._next_id += 1
            self._insert(cluster)
            result.added.append(cluster.id)

        result.removed = sorted(c.id for c in removed.values())
        if result.removed or result.added:
            logger.debug(f"frontier update: -{len(result.removed)} +{len(result.added)} "
                         f"reused {len(result.reused)}, {len(self.clusters)} clusters")
        return result

    def sample_dirty(self, current: Pose) -> List[int]:
        """Sample viewpoints for dirty clusters; returns the ids that went dormant"""
        went_dormant = []
        for cluster_id in sorted(self.clusters):
            cluster = self.clusters[cluster_id]
            if not cluster.dirty:
                continue
            try:
                cluster.viewpoints = sample_viewpoints(cluster, self.grid, self.sensor, current, self.params)
                cluster.dormant = False
            except NoViewpoint as e:
                logger.debug(str(e))
                cluster.viewpoints = []
                cluster.dormant = True
                went_dormant.append(cluster_id)
            cluster.dirty = False
        return went_dormant

    def reselect(self, current: Pose) -> None:
        """Re-run best-viewpoint selection against a new reference pose"""
        for cluster in self.active_clusters():
            cluster.viewpoints = select_best_viewpoint(cluster.viewpoints, current, self.params)

    def records(self, t: float) -> List[Dict[str, Any]]:
        return [self.clusters[k].to_record(t) for k in sorted(self.clusters)]
