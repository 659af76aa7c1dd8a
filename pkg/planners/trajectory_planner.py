from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
import math

import numpy as np
from scipy.optimize import minimize

from errors import InfeasibleStart, NoPath, OptimizationFailed
from planners.base_planner import BasePlanner, DroneState
from planners.bspline import DEGREE, UniformBSpline, linear_control_points, span_count, start_control_points
from planners.path_search import polyline_length, shortest_path
from services.grid_world import VoxelGrid, segments_clear, world_to_cell, wrap_angle


@dataclass(frozen=True)
class KinoLimits:
    v_max: float = 2.0
    a_max: float = 2.0
    yaw_rate_max: float = 1.0
    yaw_acc_max: float = 2.0

    def validate(self) -> None:
        for name in ('v_max', 'a_max', 'yaw_rate_max', 'yaw_acc_max'):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class TrajectoryParams:
    inflation: float = 0.3
    max_knot_span: float = 0.1
    time_margin: float = 0.9
    penalty_margin: float = 0.95
    tolerance: float = 1.05
    smoothness_weight: float = 1.0
    collision_weight: float = 10.0
    feasibility_weight: float = 1.0
    samples_per_span: int = 5
    check_samples_per_span: int = 20
    max_iterations: int = 200
    ftol: float = 1e-6
    max_retries: int = 3
    min_duration: float = 0.5
    distance_cap: float = 1.0
    yaw_knot_span: float = 0.25


@dataclass
class TrajectoryResult:
    spline: UniformBSpline
    duration: float
    seed_path: List[np.ndarray] = field(default_factory=list)
    iterations: int = 0

    @property
    def goal(self) -> np.ndarray:
        return self.spline.control_points[-1]


@dataclass
class FeasibilityCheck:
    velocity_ratio: float
    acceleration_ratio: float
    min_clearance: float
    clearance_floor: float
    tolerance: float

    @property
    def dynamics_ok(self) -> bool:
        return self.velocity_ratio <= self.tolerance and self.acceleration_ratio <= self.tolerance

    @property
    def collision_free(self) -> bool:
        return self.min_clearance >= self.clearance_floor

    @property
    def ok(self) -> bool:
        return self.dynamics_ok and self.collision_free


class DistanceField:
    def __init__(self, grid: VoxelGrid, cap: float = 5.0):
        """Trilinear interpolation of the Occupied-cell distance transform"""
        values = np.minimum(grid.occupied_distance(), cap)
        pad = [(0, 1 if n < 2 else 0) for n in values.shape]
        self.values = np.pad(values, pad, mode='edge')
        self.origin = grid.origin.copy()
        self.resolution = grid.resolution
        self.shape = np.asarray(self.values.shape)

    def query(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Distance (m) and its gradient at (S, 3) points"""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        u = (pts - self.origin) / self.resolution - 0.5
        base = np.clip(np.floor(u).astype(np.int64), 0, self.shape - 2)
        raw = u - base
        frac = np.clip(raw, 0.0, 1.0)
        active = ((raw >= 0.0) & (raw <= 1.0)).astype(float)
        i, j, k = base[:, 0], base[:, 1], base[:, 2]
        v = self.values
        c000, c100 = v[i, j, k], v[i + 1, j, k]
        c010, c110 = v[i, j + 1, k], v[i + 1, j + 1, k]
        c001, c101 = v[i, j, k + 1], v[i + 1, j, k + 1]
        c011, c111 = v[i, j + 1, k + 1], v[i + 1, j + 1, k + 1]
        fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]

        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        distance = c0 * (1 - fz) + c1 * fz

        dx = ((c100 - c000) * (1 - fy) * (1 - fz) + (c110 - c010) * fy * (1 - fz)
              + (c101 - c001) * (1 - fy) * fz + (c111 - c011) * fy * fz)
        dy = (c10 - c00) * (1 - fz) + (c11 - c01) * fz
        dz = c1 - c0
        gradient = np.stack([dx, dy, dz], axis=-1) * active / self.resolution
        return distance, gradient


class PositionObjective:
    def __init__(self, start_points: np.ndarray, end_points: np.ndarray, num_free: int, knot_span: float,
                 distance_field: DistanceField, limits: KinoLimits, params: TrajectoryParams,
                 collision_weight: Optional[float] = None, safe_distance: Optional[float] = None):
        """Smoothness, collision and feasibility cost over the free control points"""
        self.start_points = start_points
        self.end_points = end_points
        self.num_free = num_free
        self.knot_span = knot_span
        self.field = distance_field
        self.limits = limits
        self.params = params
        self.collision_weight = params.collision_weight if collision_weight is None else collision_weight
        self.safe_distance = (params.inflation + 0.5 * distance_field.resolution
                              if safe_distance is None else safe_distance)
        count = num_free + 6
        template = UniformBSpline(np.zeros((count, 3)), knot_span)
        self.basis = template.basis_matrix(template.sample_times(params.samples_per_span))

    def full(self, x: np.ndarray) -> np.ndarray:
        return np.vstack([self.start_points, np.asarray(x, dtype=float).reshape(-1, 3), self.end_points])

    def cost_and_grad(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        points = self.full(x)
        grad = np.zeros_like(points)
        p = self.params
        dt = self.knot_span

        # Smoothness
        second = points[2:] - 2.0 * points[1:-1] + points[:-2]
        cost = p.smoothness_weight * float(np.sum(second * second))
        g = 2.0 * p.smoothness_weight * second
        grad[2:] += g
        grad[1:-1] -= 2.0 * g
        grad[:-2] += g

        # Collision
        samples = self.basis @ points
        distance, d_grad = self.field.query(samples)
        violation = np.maximum(self.safe_distance - distance, 0.0)
        cost += self.collision_weight * float(np.sum(violation * violation))
        sample_grad = (-2.0 * self.collision_weight * violation)[:, None] * d_grad
        grad += self.basis.T @ sample_grad

        # Velocity and acceleration limits on derivative control points
        velocity = np.diff(points, axis=0) / dt
        v_lim = (p.penalty_margin * self.limits.v_max) ** 2
        excess = np.maximum(np.sum(velocity * velocity, axis=1) - v_lim, 0.0)
        cost += p.feasibility_weight * float(np.sum(excess * excess))
        dv = (4.0 * p.feasibility_weight * excess)[:, None] * velocity / dt
        grad[1:] += dv
        grad[:-1] -= dv

        acceleration = second / (dt * dt)
        a_lim = (p.penalty_margin * self.limits.a_max) ** 2
        excess = np.maximum(np.sum(acceleration * acceleration, axis=1) - a_lim, 0.0)
        cost += p.feasibility_weight * float(np.sum(excess * excess))
        da = (4.0 * p.feasibility_weight * excess)[:, None] * acceleration / (dt * dt)
        grad[2:] += da
        grad[1:-1] -= 2.0 * da
        grad[:-2] += da

        return cost, grad[3:-3].ravel()


class YawObjective:
    def __init__(self, start: float, end: float, spans: int, knot_span: float, limits: KinoLimits,
                 gammas: Sequence[float] = (1.0, 10.0, 10.0, 1.0), margin: float = 0.95):
        """Smoothness, soft endpoint and rate/acceleration cost over all yaw control points"""
        self.start = start
        self.end = end
        self.spans = spans
        self.knot_span = knot_span
        self.limits = limits
        self.gammas = tuple(gammas)
        self.margin = margin

    def cost_and_grad(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        g1, g2, g3, g4 = self.gammas
        phi = np.asarray(x, dtype=float)
        grad = np.zeros_like(phi)
        dt = self.knot_span
        weights = np.array([1.0, 4.0, 1.0]) / 6.0

        second = phi[2:] - 2.0 * phi[1:-1] + phi[:-2]
        cost = g1 * float(np.sum(second * second))
        s = 2.0 * g1 * second
        grad[2:] += s
        grad[1:-1] -= 2.0 * s
        grad[:-2] += s

        e0 = float(weights @ phi[:3]) - self.start
        e1 = float(weights @ phi[-3:]) - self.end
        cost += g2 * e0 * e0 + g3 * e1 * e1
        grad[:3] += 2.0 * g2 * e0 * weights
        grad[-3:] += 2.0 * g3 * e1 * weights

        rate = np.diff(phi) / dt
        excess = np.maximum(np.abs(rate) - self.margin * self.limits.yaw_rate_max, 0.0)
        cost += g4 * float(np.sum(excess * excess))
        dr = 2.0 * g4 * excess * np.sign(rate) / dt
        grad[1:] += dr
        grad[:-1] -= dr

        acc = second / (dt * dt)
        excess = np.maximum(np.abs(acc) - self.margin * self.limits.yaw_acc_max, 0.0)
        cost += g4 * float(np.sum(excess * excess))
        da = 2.0 * g4 * excess * np.sign(acc) / (dt * dt)
        grad[2:] += da
        grad[1:-1] -= 2.0 * da
        grad[:-2] += da
        return cost, grad


def allocate_time(length: float, limits: KinoLimits, margin: float = 0.9) -> float:
    """Trapezoidal velocity profile duration at a fraction of the limits"""
    v = margin * limits.v_max
    a = margin * limits.a_max
    if length <= v * v / a:
        return 2.0 * math.sqrt(max(length, 0.0) / a)
    return length / v + v / a


def shortcut_path(points: List[np.ndarray], grid: VoxelGrid, blocked: np.ndarray) -> List[np.ndarray]:
    """Greedy line-of-sight simplification"""
    if len(points) <= 2:
        return list(points)
    result = [points[0]]
    i = 0
    while i < len(points) - 1:
        clear = segments_clear(grid, points[i], np.asarray(points[i + 1:]), blocked)
        ahead = np.flatnonzero(clear)
        j = i + 1 + int(ahead[-1]) if len(ahead) else i + 1
        result.append(points[j])
        i = j
    return result


def search_seed_path(grid: VoxelGrid, start, goal, inflation: float = 0.3, margin: float = 2.0) -> List[np.ndarray]:
    """
    Dijkstra over Free cells outside the obstacle inflation, shortcut by line of sight.

    The box around both endpoints, padded by `margin`, is searched first and
    the whole grid only when that box holds no path.

    Raises:
        NoPath: goal unreachable through Free space
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if np.allclose(start, goal, atol=1e-9):
        return [start]
    start_cell = world_to_cell(grid, start)
    goal_cell = world_to_cell(grid, goal)
    if start_cell is None or goal_cell is None:
        raise NoPath(f"endpoint outside bounds: {start.tolist()} -> {goal.tolist()}")

    passable = grid.free_mask() & ~grid.inflated_occupied(inflation)
    passable[start_cell] = True
    passable[goal_cell] = True
    pad = int(math.ceil(margin / grid.resolution))
    ends = np.array([start_cell, goal_cell])
    lo = tuple(int(v) for v in np.maximum(ends.min(axis=0) - pad, 0))
    hi = tuple(int(v) for v in np.minimum(ends.max(axis=0) + pad + 1, grid.cells.shape))
    result = shortest_path(passable, start_cell, goal_cell, grid.resolution, lo, hi)
    if not result.found:
        result = shortest_path(passable, start_cell, goal_cell, grid.resolution)
    if not result.found:
        raise NoPath(f"no free path from {start_cell} to {goal_cell} after {result.expansions} expansions")

    waypoints = [start] + [grid.cell_center(c) for c in result.path[1:-1]] + [goal]
    return shortcut_path(waypoints, grid, ~passable)


def check_feasibility(spline: UniformBSpline, distance_field: DistanceField, limits: KinoLimits,
                      params: TrajectoryParams) -> FeasibilityCheck:
    times = spline.sample_times(params.check_samples_per_span)
    positions = spline.evaluate(times)
    velocity = np.linalg.norm(spline.evaluate(times, 1), axis=1)
    acceleration = np.linalg.norm(spline.evaluate(times, 2), axis=1)
    distance, _ = distance_field.query(positions)
    return FeasibilityCheck(
        velocity_ratio=float(velocity.max()) / limits.v_max,
        acceleration_ratio=float(acceleration.max()) / limits.a_max,
        min_clearance=float(distance.min()),
        clearance_floor=params.inflation - 0.5 * distance_field.resolution,
        tolerance=params.tolerance,
    )


def _resample(seed: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    lengths = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(seed, axis=0), axis=1))])
    if lengths[-1] <= 0:
        return np.tile(seed[0], (len(fractions), 1))
    target = np.clip(fractions, 0.0, 1.0) * lengths[-1]
    return np.stack([np.interp(target, lengths, seed[:, axis]) for axis in range(3)], axis=-1)


def _solve_position(seed: np.ndarray, state: DroneState, spans: int, knot_span: float,
                    distance_field: DistanceField, limits: KinoLimits, params: TrajectoryParams,
                    collision_weight: float) -> Tuple[UniformBSpline, int]:
    count = spans + DEGREE
    start_points = start_control_points(state.position, state.velocity, state.acceleration, knot_span)
    end_points = np.tile(seed[-1], (3, 1))
    num_free = count - 6
    objective = PositionObjective(start_points, end_points, num_free, knot_span, distance_field, limits,
                                  params, collision_weight)
    fractions = (np.arange(3, count - 3) - 1.0) / spans
    x0 = _resample(seed, fractions).ravel()
    result = minimize(objective.cost_and_grad, x0, jac=True, method='L-BFGS-B',
                      options={'maxiter': params.max_iterations, 'ftol': params.ftol})
    if not np.all(np.isfinite(result.x)):
        raise OptimizationFailed("optimizer returned non-finite control points", list(seed))
    return UniformBSpline(objective.full(result.x), knot_span), int(result.nit)


def optimize_position_trajectory(seed: Sequence, state: DroneState, limits: KinoLimits, grid: VoxelGrid,
                                 t_min: float = 0.0, params: TrajectoryParams = TrajectoryParams(),
                                 distance_field: Optional[DistanceField] = None) -> TrajectoryResult:
    """
    Fit a cubic B-spline from the start state to the seed's last waypoint.

    The first three control points are fixed by the start position, velocity
    and acceleration, the last three by the goal (zero end velocity). The
    rest are optimized with L-BFGS-B. Infeasible results are re-solved with a
    longer knot span (dynamics) or a heavier collision weight (clearance).

    Args:
        seed: Waypoints, at least two
        state: Start state X_0
        limits: Kinematic limits
        grid: Map providing the distance field
        t_min: Minimum duration
        params: Optimizer settings

    Returns:
        TrajectoryResult with duration >= t_min

    Raises:
        InfeasibleStart: X_0 already exceeds the limits
        OptimizationFailed: no feasible spline within the retry budget
    """
    seed = np.atleast_2d(np.asarray(seed, dtype=float))
    if len(seed) < 2:
        raise ValueError("seed path needs at least two waypoints")
    if t_min < 0:
        raise ValueError(f"t_min must be non-negative, got {t_min}")
    speed = float(np.linalg.norm(state.velocity))
    accel = float(np.linalg.norm(state.acceleration))
    if speed > params.tolerance * limits.v_max or accel > params.tolerance * limits.a_max:
        raise InfeasibleStart(f"start speed {speed:.3f} m/s or acceleration {accel:.3f} m/s^2 exceeds limits")

    distance_field = distance_field or DistanceField(grid, params.distance_cap)
    length = polyline_length(seed)
    # Room to brake from the current speed
    duration = max(allocate_time(length, limits, params.time_margin),
                   2.0 * speed / (params.time_margin * limits.a_max),
                   params.min_duration, t_min)
    spans = span_count(duration, params.max_knot_span, minimum=4)
    knot_span = duration / spans
    collision_weight = params.collision_weight
    iterations = 0

    for _ in range(params.max_retries + 1):
        spline, nit = _solve_position(seed, state, spans, knot_span, distance_field, limits, params,
                                      collision_weight)
        iterations += nit
        check = check_feasibility(spline, distance_field, limits, params)
        if check.ok:
            return TrajectoryResult(spline, spline.duration, [p for p in seed], iterations)
        if not check.dynamics_ok:
            ratio = max(check.velocity_ratio, math.sqrt(check.acceleration_ratio)) / params.tolerance
            knot_span *= max(ratio, 1.0) * 1.05
        if not check.collision_free:
            collision_weight *= 10.0

    raise OptimizationFailed(
        f"no feasible spline after {params.max_retries} retries "
        f"(v ratio {check.velocity_ratio:.2f}, a ratio {check.acceleration_ratio:.2f}, "
        f"clearance {check.min_clearance:.2f} m)", [p for p in seed])


def optimize_yaw_trajectory(xi_start: float, xi_end: float, duration: float, limits: KinoLimits,
                            gammas: Sequence[float] = (1.0, 10.0, 10.0, 1.0), knot_span: float = 0.25,
                            max_iterations: int = 200, tolerance: float = 0.05) -> UniformBSpline:
    """Yaw spline from xi_start to xi_end along the minor arc; the end value is unwrapped"""
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    end = xi_start + float(wrap_angle(xi_end - xi_start))
    spans = span_count(duration, knot_span, minimum=4)
    dt = duration / spans
    objective = YawObjective(xi_start, end, spans, dt, limits, gammas)
    x0 = linear_control_points(xi_start, end, spans)[:, 0]
    result = minimize(objective.cost_and_grad, x0, jac=True, method='L-BFGS-B',
                      options={'maxiter': max_iterations})
    if not np.all(np.isfinite(result.x)):
        raise OptimizationFailed("yaw optimizer returned non-finite control points")
    spline = UniformBSpline(result.x, dt)
    start_error = abs(float(spline.evaluate(0.0)[0]) - xi_start)
    end_error = abs(float(spline.evaluate(spline.duration)[0]) - end)
    if start_error > tolerance or end_error > tolerance:
        raise OptimizationFailed(f"yaw endpoints missed by {start_error:.3f} / {end_error:.3f} rad")
    return spline


class TrajectoryPlanner(BasePlanner):
    def __init__(self, grid: VoxelGrid, limits: KinoLimits = KinoLimits(),
                 params: TrajectoryParams = TrajectoryParams()):
        """Seed search plus spline optimization against one map"""
        super().__init__()
        self.grid = grid
        self.limits = limits
        self.params = params
        self._field: Optional[DistanceField] = None
        self._field_version = -1

    def distance_field(self) -> DistanceField:
        if self._field is None or self._field_version != self.grid.version:
            self._field = DistanceField(self.grid, self.params.distance_cap)
            self._field_version = self.grid.version
        return self._field

    def plan(self, state: DroneState, goal, t_min: float = 0.0) -> TrajectoryResult:
        """Position trajectory from state to goal lasting at least t_min"""
        seed = search_seed_path(self.grid, state.position, goal, self.params.inflation)
        if len(seed) == 1:
            seed = [seed[0], seed[0]]
        result = optimize_position_trajectory(seed, state, self.limits, self.grid, t_min, self.params,
                                              self.distance_field())
        self.logger.debug(f"trajectory {self.format_duration(result.duration)} over "
                          f"{len(seed)} waypoints, {result.iterations} iterations")
        return result

    def plan_yaw(self, xi_start: float, xi_end: float, duration: float,
                 gammas: Sequence[float] = (1.0, 10.0, 10.0, 1.0)) -> UniformBSpline:
        return optimize_yaw_trajectory(xi_start, xi_end, duration, self.limits, gammas,
                                       self.params.yaw_knot_span, self.params.max_iterations)
