from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple
import logging
import math

import numpy as np
from scipy import ndimage

from errors import ConfigError, GenerationFailed
from services.grid_world import (Box, BoxObstacle, CylinderObstacle, GroundTruthWorld, Obstacle, Pose, Scenario,
                                 VoxelGrid)

logger = logging.getLogger(__name__)

GENERATORS = ('empty', 'maze', 'corridor', 'outdoor')
START_CLEARANCE = 0.5

# Free rectangles of the corridor layout, x/y ranges in metres
CORRIDOR_BOUNDS = ((0.0, 0.0, 0.0), (24.0, 14.0, 2.0))
CORRIDOR_START = (2.0, 2.0, 1.0)
CORRIDOR_FREE = {
    'main_corridor': ((1.0, 16.0), (1.0, 3.0)),
    'entry_pocket': ((1.0, 2.6), (3.0, 4.4)),
    'vertical_corridor': ((16.0, 18.0), (1.0, 12.0)),
    'interior_corner': ((18.0, 19.2), (1.0, 2.4)),
    'side_corridor': ((11.0, 16.0), (6.0, 7.6)),
    'final_corner': ((14.0, 22.0), (9.5, 13.5)),
    'left_corridor': ((4.0, 14.0), (10.5, 12.5)),
}
# The four features the ablation comparison is about
CORRIDOR_PARTS = {
    1: 'entry_pocket',
    2: 'interior_corner',
    3: 'side_corridor',
    4: 'final_corner',
}


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    bounds: Box
    generator: str = 'empty'
    resolution: float = 0.2
    seed: int = 0
    cell_size: float = 4.0
    wall_thickness: float = 0.4
    door_fraction: float = 0.5
    tree_count: int = 18
    car_count: int = 4
    fence_count: int = 3
    min_gap: float = 1.2
    start: Optional[Tuple[float, float, float]] = None
    start_yaw: float = 0.0

    def validate(self) -> None:
        if self.generator not in GENERATORS:
            raise ConfigError('generator', f"expected one of {', '.join(GENERATORS)}, got {self.generator!r}")
        if np.any(self.bounds.size <= 0):
            raise ConfigError('bounds', 'max must exceed min on every axis')
        if self.resolution <= 0:
            raise ConfigError('resolution', 'must be positive')
        if self.cell_size <= 2 * self.wall_thickness:
            raise ConfigError('cell_size', 'must exceed twice the wall thickness')
        if not 0 < self.door_fraction < 1:
            raise ConfigError('door_fraction', 'must lie in (0, 1)')


PRESETS: Dict[str, ScenarioSpec] = {
    'empty': ScenarioSpec('empty', Box.of((0, 0, 0), (10, 10, 2)), 'empty', start=(5.0, 5.0, 1.0)),
    'maze1': ScenarioSpec('maze1', Box.of((0, 0, 0), (30, 16, 2)), 'maze'),
    'maze2': ScenarioSpec('maze2', Box.of((0, 0, 0), (20, 20, 2)), 'maze'),
    'outdoor': ScenarioSpec('outdoor', Box.of((0, 0, 0), (20, 30, 3)), 'outdoor', start=(2.0, 2.0, 1.5)),
    'corridor': ScenarioSpec('corridor', Box.of(*CORRIDOR_BOUNDS), 'corridor', start=CORRIDOR_START),
}


def preset(name: str, seed: int = 0, resolution: Optional[float] = None) -> ScenarioSpec:
    if name not in PRESETS:
        raise ConfigError('type', f"expected one of {', '.join(PRESETS)}, got {name!r}")
    spec = replace(PRESETS[name], seed=seed)
    if resolution is not None:
        spec = replace(spec, resolution=resolution)
    return spec


def clearance(world: GroundTruthWorld, point) -> float:
    """Distance from a point to the nearest obstacle surface or bounds face"""
    p = np.asarray(point, dtype=float)
    bounds = world.bounds
    best = float(np.min(np.minimum(p - bounds.lo_array, bounds.hi_array - p)))
    for obstacle in world.obstacles:
        if isinstance(obstacle, CylinderObstacle):
            radial = max(math.hypot(p[0] - obstacle.center[0], p[1] - obstacle.center[1]) - obstacle.radius, 0.0)
            vertical = max(obstacle.z_min - p[2], p[2] - obstacle.z_max, 0.0)
            distance = math.hypot(radial, vertical)
        else:
            lo, hi = np.asarray(obstacle.lo), np.asarray(obstacle.hi)
            distance = float(np.linalg.norm(np.maximum(np.maximum(lo - p, p - hi), 0.0)))
        best = min(best, distance)
    return best


def _box_distance(a: Box, b: Box) -> float:
    gap = np.maximum(np.maximum(a.lo_array - b.hi_array, b.lo_array - a.hi_array), 0.0)
    return float(np.linalg.norm(gap))


def _maze_walls(spec: ScenarioSpec, rng: np.random.Generator) -> List[Obstacle]:
    lo, hi = spec.bounds.lo_array, spec.bounds.hi_array
    nx = max(1, int(round((hi[0] - lo[0]) / spec.cell_size)))
    ny = max(1, int(round((hi[1] - lo[1]) / spec.cell_size)))
    xs = np.linspace(lo[0], hi[0], nx + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    half = spec.wall_thickness / 2.0
    walls: List[Obstacle] = []

    def wall(axis: int, at: float, start: float, stop: float, door_cell: Tuple[float, float]) -> None:
        width = (door_cell[1] - door_cell[0]) * spec.door_fraction
        mid = 0.5 * (door_cell[0] + door_cell[1])
        for a, b in ((start, mid - width / 2.0), (mid + width / 2.0, stop)):
            if b - a <= 1e-9:
                continue
            if axis == 0:
                walls.append(BoxObstacle((at - half, a, lo[2]), (at + half, b, hi[2])))
            else:
                walls.append(BoxObstacle((a, at - half, lo[2]), (b, at + half, hi[2])))

    def divide(x0: int, y0: int, x1: int, y1: int) -> None:
        w, h = x1 - x0, y1 - y0
        if w < 2 and h < 2:
            return
        vertical = w > h if w != h else bool(rng.integers(2))
        if vertical and w >= 2:
            k = x0 + int(rng.integers(1, w))
            door = y0 + int(rng.integers(h))
            wall(0, xs[k], ys[y0], ys[y1], (ys[door], ys[door + 1]))
            divide(x0, y0, k, y1)
            divide(k, y0, x1, y1)
        else:
            k = y0 + int(rng.integers(1, h))
            door = x0 + int(rng.integers(w))
            wall(1, ys[k], xs[x0], xs[x1], (xs[door], xs[door + 1]))
            divide(x0, y0, x1, k)
            divide(x0, k, x1, y1)

    divide(0, 0, nx, ny)
    return walls


def _corridor_walls(spec: ScenarioSpec) -> List[Obstacle]:
    """Complement of the free rectangles, merged into boxes along x"""
    lo, hi = spec.bounds.lo_array, spec.bounds.hi_array
    rects = list(CORRIDOR_FREE.values())
    xs = sorted({lo[0], hi[0], *[v for r in rects for v in r[0]]})
    ys = sorted({lo[1], hi[1], *[v for r in rects for v in r[1]]})

    def is_free(x: float, y: float) -> bool:
        return any(r[0][0] <= x <= r[0][1] and r[1][0] <= y <= r[1][1] for r in rects)

    walls: List[Obstacle] = []
    for j in range(len(ys) - 1):
        run_start = None
        for i in range(len(xs) - 1):
            blocked = not is_free(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1]))
            if blocked and run_start is None:
                run_start = xs[i]
            if not blocked and run_start is not None:
                walls.append(BoxObstacle((run_start, ys[j], lo[2]), (xs[i], ys[j + 1], hi[2])))
                run_start = None
        if run_start is not None:
            walls.append(BoxObstacle((run_start, ys[j], lo[2]), (xs[-1], ys[j + 1], hi[2])))
    return walls


def _outdoor_obstacles(spec: ScenarioSpec, start: np.ndarray, rng: np.random.Generator) -> List[Obstacle]:
    lo, hi = spec.bounds.lo_array, spec.bounds.hi_array
    placed: List[Obstacle] = []
    keep_out = Box.of(start - 1.5, start + 1.5)

    def try_place(make, count: int, kind: str) -> None:
        attempts = 0
        added = 0
        while added < count:
            attempts += 1
            if attempts > 200 * max(count, 1):
                logger.warning(f"placed only {added}/{count} {kind}")
                return
            obstacle = make()
            box = obstacle.aabb()
            if box.intersects(keep_out):
                continue
            if any(_box_distance(box, other.aabb()) < spec.min_gap for other in placed):
                continue
            placed.append(obstacle)
            added += 1

    def tree() -> Obstacle:
        radius = float(rng.uniform(0.3, 0.6))
        x = float(rng.uniform(lo[0] + radius + 0.5, hi[0] - radius - 0.5))
        y = float(rng.uniform(lo[1] + radius + 0.5, hi[1] - radius - 0.5))
        return CylinderObstacle((x, y), radius, float(lo[2]), float(hi[2]))

    def car() -> Obstacle:
        dx, dy = (1.8, 4.0) if rng.integers(2) else (4.0, 1.8)
        x = float(rng.uniform(lo[0] + 0.5, hi[0] - dx - 0.5))
        y = float(rng.uniform(lo[1] + 0.5, hi[1] - dy - 0.5))
        return BoxObstacle((x, y, float(lo[2])), (x + dx, y + dy, float(lo[2]) + 1.5))

    def fence() -> Obstacle:
        length = float(rng.uniform(3.0, 6.0))
        dx, dy = (length, 0.2) if rng.integers(2) else (0.2, length)
        x = float(rng.uniform(lo[0] + 0.5, hi[0] - dx - 0.5))
        y = float(rng.uniform(lo[1] + 0.5, hi[1] - dy - 0.5))
        return BoxObstacle((x, y, float(lo[2])), (x + dx, y + dy, float(lo[2]) + 1.2))

    try_place(tree, spec.tree_count, 'trees')
    try_place(car, spec.car_count, 'cars')
    try_place(fence, spec.fence_count, 'fences')
    return placed


def generate(spec: ScenarioSpec) -> Scenario:
    """
    Build a ground-truth world and start pose from a spec.

    Deterministic for a given spec; the corridor layout ignores the seed.

    Raises:
        GenerationFailed: the start pose lacks the required clearance
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.bounds.lo_array, spec.bounds.hi_array
    if spec.start is not None:
        start = np.asarray(spec.start, dtype=float)
    elif spec.generator == 'maze':
        nx = max(1, int(round((hi[0] - lo[0]) / spec.cell_size)))
        ny = max(1, int(round((hi[1] - lo[1]) / spec.cell_size)))
        start = np.array([lo[0] + 0.5 * (hi[0] - lo[0]) / nx, lo[1] + 0.5 * (hi[1] - lo[1]) / ny,
                          0.5 * (lo[2] + hi[2])])
    else:
        start = spec.bounds.center

    if spec.generator == 'empty':
        obstacles: List[Obstacle] = []
    elif spec.generator == 'maze':
        obstacles = _maze_walls(spec, rng)
    elif spec.generator == 'corridor':
        obstacles = _corridor_walls(spec)
    else:
        obstacles = _outdoor_obstacles(spec, start, rng)

    world = GroundTruthWorld(obstacles, spec.bounds)
    gap = clearance(world, start)
    if gap < START_CLEARANCE:
        raise GenerationFailed(f"start {start.tolist()} has {gap:.2f} m clearance, need {START_CLEARANCE} m")
    logger.debug(f"generated {spec.name}: {len(obstacles)} obstacles")
    return Scenario(spec.name, world, spec.resolution, Pose.of(start, spec.start_yaw))


def jitter_start(scenario: Scenario, seed: int, jitter: float, attempts: int = 100) -> Pose:
    """Seeded XY perturbation of the start position that keeps the start clearance"""
    start = scenario.start_pose
    if jitter <= 0:
        return start
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        offset = rng.uniform(-jitter, jitter, size=2)
        if np.hypot(*offset) > jitter:
            continue
        candidate = start.p + np.array([offset[0], offset[1], 0.0])
        if scenario.world.bounds.contains(candidate) and clearance(scenario.world, candidate) >= START_CLEARANCE:
            return Pose.of(candidate, start.yaw)
    logger.warning(f"no valid start jitter for seed {seed}, using the scenario start")
    return start


def reachable_free_mask(world: GroundTruthWorld, grid: VoxelGrid, start) -> np.ndarray:
    """Non-solid cells face-connected to the start cell"""
    free = ~world.solid_mask(grid)
    labels, _ = ndimage.label(free)
    idx, inside = grid.cells_of(np.asarray(start, dtype=float))
    if not bool(inside):
        return np.zeros(grid.dims, dtype=bool)
    label = labels[tuple(int(v) for v in idx)]
    if label == 0:
        return np.zeros(grid.dims, dtype=bool)
    return labels == label
