from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, List, Optional, Tuple, Union
import json
import logging
import math

import numpy as np
from scipy import ndimage

from errors import ConfigError, OutOfBounds, PoseInvalid

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]
CellIndex = Tuple[int, int, int]


class CellState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; membership is lower-inclusive, upper-exclusive"""
    lo: Vec3
    hi: Vec3

    @classmethod
    def of(cls, lo, hi) -> 'Box':
        return cls(tuple(float(v) for v in lo), tuple(float(v) for v in hi))

    @property
    def lo_array(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @property
    def hi_array(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    @property
    def size(self) -> np.ndarray:
        return self.hi_array - self.lo_array

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo_array + self.hi_array)

    @property
    def volume(self) -> float:
        return float(np.prod(np.maximum(self.size, 0.0)))

    def contains(self, points: np.ndarray) -> Union[bool, np.ndarray]:
        pts = np.asarray(points, dtype=float)
        inside = np.all((pts >= self.lo_array) & (pts < self.hi_array), axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def intersects(self, other: 'Box') -> bool:
        return bool(np.all(self.lo_array < other.hi_array) and np.all(other.lo_array < self.hi_array))

    def expanded(self, margin: float) -> 'Box':
        return Box.of(self.lo_array - margin, self.hi_array + margin)

    def union(self, other: 'Box') -> 'Box':
        return Box.of(np.minimum(self.lo_array, other.lo_array), np.maximum(self.hi_array, other.hi_array))

    def to_dict(self) -> Dict[str, List[float]]:
        return {'min': list(self.lo), 'max': list(self.hi)}


@dataclass(frozen=True)
class Pose:
    """Position plus yaw; the sensor pitch is always zero"""
    position: Vec3
    yaw: float = 0.0

    @classmethod
    def of(cls, position, yaw: float = 0.0) -> 'Pose':
        return cls(tuple(float(v) for v in position), float(yaw))

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class BoxObstacle:
    lo: Vec3
    hi: Vec3
    kind: str = 'box'

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.all((pts >= np.asarray(self.lo)) & (pts <= np.asarray(self.hi)), axis=-1)

    def aabb(self) -> Box:
        return Box.of(self.lo, self.hi)

    def to_dict(self) -> Dict[str, Any]:
        return {'type': 'box', 'min': list(self.lo), 'max': list(self.hi)}


@dataclass(frozen=True)
class CylinderObstacle:
    """Vertical cylinder"""
    center: Tuple[float, float]
    radius: float
    z_min: float
    z_max: float
    kind: str = 'cylinder'

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        dx = pts[..., 0] - self.center[0]
        dy = pts[..., 1] - self.center[1]
        return (dx * dx + dy * dy <= self.radius ** 2) & (pts[..., 2] >= self.z_min) & (pts[..., 2] <= self.z_max)

    def aabb(self) -> Box:
        return Box.of((self.center[0] - self.radius, self.center[1] - self.radius, self.z_min),
                      (self.center[0] + self.radius, self.center[1] + self.radius, self.z_max))

    def to_dict(self) -> Dict[str, Any]:
        return {'type': 'cylinder', 'center': list(self.center), 'radius': self.radius,
                'z_min': self.z_min, 'z_max': self.z_max}


Obstacle = Union[BoxObstacle, CylinderObstacle]


class VoxelGrid:
    def __init__(self, bounds: Box, resolution: float, distance_cap: float = 1.0):
        """
        Dense occupancy map covering the mission bounds.

        Args:
            bounds: Mission box
            resolution: Cell edge length (m)
            distance_cap: Obstacle distances are only tracked up to this value (m)
        """
        if resolution <= 0:
            raise ValueError(f"resolution must be positive, got {resolution}")
        if distance_cap <= 0:
            raise ValueError(f"distance_cap must be positive, got {distance_cap}")
        self.bounds = bounds
        self.resolution = float(resolution)
        self.distance_cap = float(distance_cap)
        self.origin = bounds.lo_array.copy()
        self.dims = tuple(
            max(1, int(math.ceil(round(float(extent) / self.resolution, 9))))
            for extent in bounds.size
        )
        self.cells = np.zeros(self.dims, dtype=np.uint8)
        self.version = 0
        self.last_changed_region: Optional[Box] = None
        self._cache: Dict[Any, Any] = {}
        self._distance: Optional[np.ndarray] = None
        self._stale_distance: Optional[Box] = None

    @property
    def cell_volume(self) -> float:
        return self.resolution ** 3

    def copy(self) -> 'VoxelGrid':
        clone = VoxelGrid(self.bounds, self.resolution, self.distance_cap)
        clone.cells = self.cells.copy()
        clone.version = self.version
        return clone

    def cells_of(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized world_to_cell: (..., 3) points -> (..., 3) indices and an inside mask"""
        pts = np.asarray(points, dtype=float)
        inside = np.all((pts >= self.origin) & (pts < self.bounds.hi_array), axis=-1)
        idx = np.floor((pts - self.origin) / self.resolution).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.dims) - 1)
        return idx, inside

    def cell_center(self, index) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=float) + 0.5) * self.resolution

    def cell_centers(self, indices: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(indices, dtype=float) + 0.5) * self.resolution

    def state_at(self, indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(indices)
        return self.cells[idx[..., 0], idx[..., 1], idx[..., 2]]

    def index_range(self, region: Box, margin_cells: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        """Half-open index range [lo, hi) of the cells overlapping a world box"""
        lo = np.floor((region.lo_array - self.origin) / self.resolution).astype(int) - margin_cells
        hi = np.ceil((region.hi_array - self.origin) / self.resolution).astype(int) + margin_cells
        lo = np.clip(lo, 0, np.asarray(self.dims))
        hi = np.clip(hi, 0, np.asarray(self.dims))
        return lo, hi

    def region_of_cells(self, indices: np.ndarray) -> Box:
        idx = np.asarray(indices)
        lo = self.origin + idx.min(axis=0) * self.resolution
        hi = self.origin + (idx.max(axis=0) + 1) * self.resolution
        return Box.of(lo, np.minimum(hi, self.bounds.hi_array))

    def counts(self) -> Dict[str, int]:
        binc = np.bincount(self.cells.ravel(), minlength=3)
        return {'unknown': int(binc[0]), 'free': int(binc[1]), 'occupied': int(binc[2])}

    def known_volume(self) -> float:
        return float(np.count_nonzero(self.cells != CellState.UNKNOWN)) * self.cell_volume

    def mark_changed(self, region: Optional[Box], new_occupied: Optional[Box] = None) -> None:
        """
        Bump the map version after cells were written.

        Args:
            region: Box of the changed cells; None means arbitrary edits and
                drops every derived array
            new_occupied: Box of the cells that turned Occupied, if any
        """
        self.version += 1
        self.last_changed_region = region
        self._cache.clear()
        if region is None:
            self._distance = None
            self._stale_distance = None
        elif new_occupied is not None and self._distance is not None:
            stale = self._stale_distance
            self._stale_distance = new_occupied if stale is None else stale.union(new_occupied)

    def _cached_mask(self, name: str, state: CellState) -> np.ndarray:
        key = (name, self.version)
        if key not in self._cache:
            self._cache[key] = self.cells == state
        return self._cache[key]

    def free_mask(self) -> np.ndarray:
        """Free cells of the current version; callers must not write to it"""
        return self._cached_mask('free', CellState.FREE)

    def occupied_mask(self) -> np.ndarray:
        return self._cached_mask('occupied', CellState.OCCUPIED)

    def _distance_block(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        occupied = self.cells[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] == CellState.OCCUPIED
        if not occupied.any():
            return np.full(occupied.shape, self.distance_cap)
        return np.minimum(ndimage.distance_transform_edt(~occupied) * self.resolution, self.distance_cap)

    def occupied_distance(self) -> np.ndarray:
        """
        Euclidean distance (m) from each cell center to the nearest Occupied
        cell center, clipped at distance_cap.

        Occupied cells never revert, so after a scan only cells within the cap
        of the newly Occupied ones can change; those are recomputed from a
        block padded by another cap so every obstacle in range is seen.
        """
        if self._distance is None:
            self._distance = self._distance_block(np.zeros(3, dtype=int), np.asarray(self.dims))
            self._stale_distance = None
        elif self._stale_distance is not None:
            reach = int(math.ceil(self.distance_cap / self.resolution)) + 1
            lo, hi = self.index_range(self._stale_distance, margin_cells=reach)
            src_lo, src_hi = self.index_range(self._stale_distance, margin_cells=2 * reach)
            block = self._distance_block(src_lo, src_hi)
            a, b = lo - src_lo, hi - src_lo
            self._distance[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = block[a[0]:b[0], a[1]:b[1], a[2]:b[2]]
            self._stale_distance = None
        return self._distance

    def inflated_occupied(self, radius: float) -> np.ndarray:
        """Cells within `radius` of an Occupied cell (Occupied cells included)"""
        if radius >= self.distance_cap:
            raise ValueError(f"inflation radius {radius} must stay below the distance cap {self.distance_cap}")
        key = ('inflated', self.version, round(radius, 6))
        if key not in self._cache:
            self._cache[key] = self.occupied_distance() <= radius + 1e-9
        return self._cache[key]


@dataclass
class GroundTruthWorld:
    obstacles: List[Obstacle]
    bounds: Box
    _solid_cache: Dict[Any, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for i, obstacle in enumerate(self.obstacles):
            if not obstacle.aabb().intersects(self.bounds):
                raise ValueError(f"obstacle {i} does not intersect the bounds")

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        inside = np.zeros(pts.shape[:-1], dtype=bool)
        for obstacle in self.obstacles:
            inside |= obstacle.contains(pts)
        return inside

    def solid_mask(self, grid: VoxelGrid) -> np.ndarray:
        """Cells whose center lies inside an obstacle"""
        key = (tuple(grid.origin), grid.resolution, grid.dims)
        if key not in self._solid_cache:
            solid = np.zeros(grid.dims, dtype=bool)
            for obstacle in self.obstacles:
                lo, hi = grid.index_range(obstacle.aabb(), margin_cells=1)
                if np.any(hi <= lo):
                    continue
                axes = [np.arange(lo[a], hi[a]) for a in range(3)]
                ii, jj, kk = np.meshgrid(*axes, indexing='ij')
                idx = np.stack([ii, jj, kk], axis=-1)
                solid[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= obstacle.contains(grid.cell_centers(idx))
            self._solid_cache[key] = solid
        return self._solid_cache[key]

    def free_volume(self, grid: VoxelGrid) -> float:
        return float(np.count_nonzero(~self.solid_mask(grid))) * grid.cell_volume


@dataclass(frozen=True)
class SensorModel:
    fov_h: float = math.radians(80.0)
    fov_v: float = math.radians(60.0)
    range: float = 4.5
    ray_step: float = 0.05

    def validate(self, resolution: float) -> None:
        if not 0.0 < self.fov_h < math.pi:
            raise ValueError(f"fov_h must lie in (0, pi), got {self.fov_h}")
        if not 0.0 < self.fov_v < math.pi:
            raise ValueError(f"fov_v must lie in (0, pi), got {self.fov_v}")
        if self.range <= 0:
            raise ValueError(f"range must be positive, got {self.range}")
        if not 0.0 < self.ray_step <= resolution + 1e-12:
            raise ValueError(f"ray_step must lie in (0, resolution], got {self.ray_step}")

    def ray_directions(self, yaw: float, resolution: float) -> np.ndarray:
        """Uniform angular lattice, one ray per voxel subtended at max range"""
        step = resolution / self.range
        n_h = int(math.ceil(self.fov_h / step)) + 1
        n_v = int(math.ceil(self.fov_v / step)) + 1
        azimuth = yaw + np.linspace(-0.5 * self.fov_h, 0.5 * self.fov_h, n_h)
        elevation = np.linspace(-0.5 * self.fov_v, 0.5 * self.fov_v, n_v)
        az, el = np.meshgrid(azimuth, elevation, indexing='ij')
        dirs = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
        return dirs.reshape(-1, 3)

    def in_fov(self, origin: np.ndarray, yaw: float, targets: np.ndarray) -> np.ndarray:
        """Targets inside the view cone and range of a sensor at (origin, yaw)"""
        rel = np.asarray(targets, dtype=float) - origin
        dist = np.linalg.norm(rel, axis=-1)
        horizontal = np.hypot(rel[..., 0], rel[..., 1])
        bearing = np.abs(wrap_angle(np.arctan2(rel[..., 1], rel[..., 0]) - yaw))
        elevation = np.abs(np.arctan2(rel[..., 2], horizontal))
        return (dist <= self.range) & (bearing <= 0.5 * self.fov_h) & (elevation <= 0.5 * self.fov_v)


@dataclass(frozen=True)
class SenseResult:
    changed: int
    region: Optional[Box]


def wrap_angle(angle):
    """Normalize to [-pi, pi)"""
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi if isinstance(angle, np.ndarray) \
        else (float(angle) + math.pi) % (2.0 * math.pi) - math.pi


def world_to_cell(grid: VoxelGrid, p) -> Optional[CellIndex]:
    """Containing cell of p, or None outside the bounds"""
    idx, inside = grid.cells_of(np.asarray(p, dtype=float))
    if not bool(inside):
        return None
    return tuple(int(v) for v in idx)


def sense(grid: VoxelGrid, world: GroundTruthWorld, sensor: SensorModel, pose: Pose) -> SenseResult:
    """
    Cast the sensor's ray lattice from a pose and update the map in place.

    Each ray marks the cells it traverses Free until it meets an obstacle cell
    (marked Occupied), reaches the sensor range or leaves the bounds. Known
    cells never revert to Unknown.

    Args:
        grid: Map to update
        world: Ground truth used to answer ray queries
        sensor: FOV, range and ray step
        pose: Sensor position and yaw (pitch fixed to 0)

    Returns:
        SenseResult with the number of changed cells and their bounding region
    """
    origin = pose.p
    solid = world.solid_mask(grid)
    origin_cell = world_to_cell(grid, origin)
    if origin_cell is None or bool(world.contains(origin[None, :])[0]):
        raise PoseInvalid(f"sensor pose {pose.position} is outside the bounds or inside an obstacle")

    dirs = sensor.ray_directions(pose.yaw, grid.resolution)
    n_steps = max(1, int(math.floor(sensor.range / sensor.ray_step + 1e-9)))
    ts = np.arange(1, n_steps + 1) * sensor.ray_step
    points = origin + dirs[:, None, :] * ts[None, :, None]
    idx, inside = grid.cells_of(points)
    hit = inside & solid[idx[..., 0], idx[..., 1], idx[..., 2]]
    stop = ~inside | hit

    # First blocking sample per ray; rays that never stop run the full range
    first = np.where(stop.any(axis=1), stop.argmax(axis=1), n_steps)
    free_mask = np.arange(n_steps)[None, :] < first[:, None]
    rows = np.flatnonzero(first < n_steps)
    rows = rows[hit[rows, first[rows]]]

    free_cells = np.vstack([idx[free_mask], np.asarray(origin_cell)[None, :]])
    occupied_cells = idx[rows, first[rows]]

    changed_cells = {}
    for cells, state in ((free_cells, CellState.FREE), (occupied_cells, CellState.OCCUPIED)):
        if len(cells) == 0:
            continue
        flat = np.unique(np.ravel_multi_index(cells.T, grid.dims))
        current = grid.cells.ravel()[flat]
        fresh = flat[current == CellState.UNKNOWN]
        grid.cells.ravel()[fresh] = state
        changed_cells[state] = fresh

    fresh = np.concatenate(list(changed_cells.values())) if changed_cells else np.empty(0, dtype=np.int64)
    if len(fresh) == 0:
        return SenseResult(0, None)
    region = grid.region_of_cells(np.stack(np.unravel_index(fresh, grid.dims), axis=-1))
    new_occupied = changed_cells.get(CellState.OCCUPIED)
    occupied_region = None
    if new_occupied is not None and len(new_occupied):
        occupied_region = grid.region_of_cells(np.stack(np.unravel_index(new_occupied, grid.dims), axis=-1))
    grid.mark_changed(region, occupied_region)
    logger.debug(f"sense at {pose.position} yaw {pose.yaw:.2f}: {len(fresh)} cells changed")
    return SenseResult(int(len(fresh)), region)


def segments_clear(grid: VoxelGrid, start: np.ndarray, ends: np.ndarray,
                   blocked: np.ndarray, step: Optional[float] = None) -> np.ndarray:
    """For each segment start->end, True when no sample falls in a blocked cell"""
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    start = np.asarray(start, dtype=float)
    step = step or grid.resolution / 4.0
    vec = ends - start
    longest = float(np.linalg.norm(vec, axis=-1).max()) if len(ends) else 0.0
    n = max(1, int(math.ceil(longest / step)))
    fractions = np.linspace(0.0, 1.0, n + 1)
    points = start + vec[:, None, :] * fractions[None, :, None]
    idx, inside = grid.cells_of(points)
    hits = inside & blocked[idx[..., 0], idx[..., 1], idx[..., 2]]
    return ~hits.any(axis=1)


def is_intervisible(grid: VoxelGrid, a, b) -> bool:
    """True iff the segment a->b crosses no Occupied cell; Unknown cells do not block"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for name, point in (('a', a), ('b', b)):
        if not grid.bounds.contains(point):
            raise OutOfBounds(f"{name}={point.tolist()} outside bounds")
    occupied = grid.cells == CellState.OCCUPIED
    return bool(segments_clear(grid, a, b[None, :], occupied)[0])


@dataclass
class Scenario:
    name: str
    world: GroundTruthWorld
    resolution: float
    start_pose: Pose

    def make_grid(self) -> VoxelGrid:
        return VoxelGrid(self.world.bounds, self.resolution)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'bounds': self.world.bounds.to_dict(),
            'resolution': self.resolution,
            'obstacles': [obstacle.to_dict() for obstacle in self.world.obstacles],
            'start_pose': {'position': list(self.start_pose.position), 'yaw': self.start_pose.yaw},
        }


def _vector(data: Dict[str, Any], key: str, length: int, path: str) -> Tuple[float, ...]:
    if key not in data:
        raise ConfigError(f"{path}.{key}" if path else key, "missing")
    value = data[key]
    if not isinstance(value, (list, tuple)) or len(value) != length \
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected {length} numbers, got {value!r}")
    return tuple(float(v) for v in value)


def _number(data: Dict[str, Any], key: str, path: str) -> float:
    name = f"{path}.{key}" if path else key
    if key not in data:
        raise ConfigError(name, "missing")
    value = data[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(name, f"expected a number, got {value!r}")
    return float(value)


def obstacle_from_dict(data: Dict[str, Any], path: str) -> Obstacle:
    kind = data.get('type') if isinstance(data, dict) else None
    if kind == 'box':
        return BoxObstacle(_vector(data, 'min', 3, path), _vector(data, 'max', 3, path))
    if kind == 'cylinder':
        center = _vector(data, 'center', 2, path)
        return CylinderObstacle(center, _number(data, 'radius', path),
                                _number(data, 'z_min', path), _number(data, 'z_max', path))
    raise ConfigError(f"{path}.type", f"expected 'box' or 'cylinder', got {kind!r}")


def scenario_from_dict(data: Dict[str, Any]) -> Scenario:
    """Parse and validate a scenario document"""
    if not isinstance(data, dict):
        raise ConfigError('scenario', 'expected a JSON object')
    bounds_doc = data.get('bounds')
    if not isinstance(bounds_doc, dict):
        raise ConfigError('bounds', 'missing or not an object')
    bounds = Box.of(_vector(bounds_doc, 'min', 3, 'bounds'), _vector(bounds_doc, 'max', 3, 'bounds'))
    if np.any(bounds.size <= 0):
        raise ConfigError('bounds', 'max must exceed min on every axis')

    resolution = _number(data, 'resolution', '')
    if resolution <= 0:
        raise ConfigError('resolution', 'must be positive')

    raw_obstacles = data.get('obstacles', [])
    if not isinstance(raw_obstacles, list):
        raise ConfigError('obstacles', 'expected a list')
    obstacles = [obstacle_from_dict(o, f"obstacles[{i}]") for i, o in enumerate(raw_obstacles)]
    for i, obstacle in enumerate(obstacles):
        if not obstacle.aabb().intersects(bounds):
            raise ConfigError(f"obstacles[{i}]", 'does not intersect the bounds')

    pose_doc = data.get('start_pose')
    if not isinstance(pose_doc, dict):
        raise ConfigError('start_pose', 'missing or not an object')
    start = Pose.of(_vector(pose_doc, 'position', 3, 'start_pose'), _number(pose_doc, 'yaw', 'start_pose'))

    world = GroundTruthWorld(obstacles, bounds)
    if not bounds.contains(start.p) or bool(world.contains(start.p[None, :])[0]):
        raise ConfigError('start_pose.position', 'must be inside the bounds and outside every obstacle')
    return Scenario(str(data.get('name', 'scenario')), world, resolution, start)


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise ConfigError('scenario', f"malformed JSON at line {e.lineno} column {e.colno}: {e.msg}")
    except OSError as e:
        raise ConfigError('scenario', f"cannot read {path}: {e.strerror}")
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(scenario.to_dict(), handle, indent=2)
        handle.write('\n')
