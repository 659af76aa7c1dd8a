from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple
import math

import numpy as np

from errors import EmptyCandidates
from planners.base_planner import BasePlanner, DroneState
from planners.bspline import UniformBSpline
from planners.trajectory_planner import KinoLimits, TrajectoryResult, allocate_time, optimize_yaw_trajectory
from services.frontier_service import Viewpoint, yaw_change
from services.grid_world import CellState, VoxelGrid, segments_clear, wrap_angle

SMALL_AREA_THRESHOLD = 0.5
MIN_STAGE_DURATION = 0.05


class YawMode(str, Enum):
    NORMAL = 'normal'
    TWO_STAGE = 'two_stage'


@dataclass(frozen=True)
class YawConfig:
    d_thr: Optional[float] = None
    tau: float = 1.2
    gammas: Tuple[float, float, float, float] = (1.0, 10.0, 10.0, 1.0)

    def validate(self, sensor_range: float) -> None:
        if self.tau < 1.0:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.d_thr is not None and not 0.0 < self.d_thr < sensor_range:
            raise ValueError(f"d_thr must lie in (0, range={sensor_range}), got {self.d_thr}")
        if len(self.gammas) != 4 or any(g < 0 for g in self.gammas):
            raise ValueError("gammas must be four non-negative weights")


@dataclass
class YawTiming:
    t1: float
    t2: float
    t_min: float
    ratio: float


@dataclass
class YawPlanInput:
    viewpoints: Sequence[Viewpoint]
    target: Viewpoint
    state: DroneState
    distance: float
    small_area_prob: float
    d_thr: float
    tau: float = 1.2


@dataclass
class YawPlan:
    mode: YawMode
    segments: List[UniformBSpline]
    middle_yaw: Optional[float] = None
    ratio: Optional[float] = None
    extra_viewpoints: int = 0

    @property
    def durations(self) -> List[float]:
        return [s.duration for s in self.segments]

    @property
    def duration(self) -> float:
        return float(sum(self.durations))

    def evaluate(self, t: float, order: int = 0) -> float:
        """Yaw (unwrapped) or its derivative, segments played back to back"""
        t = min(max(float(t), 0.0), self.duration)
        offset = 0.0
        for index, segment in enumerate(self.segments):
            last = index == len(self.segments) - 1
            if t <= offset + segment.duration or last:
                local = min(max(t - offset, 0.0), segment.duration)
                return float(np.asarray(segment.evaluate(local, order)).ravel()[0])
            offset += segment.duration
        return 0.0

    def end_yaw(self) -> float:
        return float(wrap_angle(self.evaluate(self.duration)))


def viewpoints_in_local(viewpoints: Sequence[Viewpoint], p0, target: Viewpoint, d_thr: float,
                        grid: VoxelGrid) -> List[Viewpoint]:
    """Extra viewpoints near p0, visible from it and less than 90 degrees off the flight direction"""
    p0 = np.asarray(p0, dtype=float)
    heading = target.p - p0
    heading_norm = float(np.linalg.norm(heading))
    if not viewpoints or heading_norm < 1e-9 or not grid.bounds.contains(p0):
        return []
    occupied = grid.cells == CellState.OCCUPIED
    kept = []
    for vp in viewpoints:
        if vp is target or (vp.position == target.position and vp.yaw == target.yaw):
            continue
        offset = vp.p - p0
        distance = float(np.linalg.norm(offset))
        if distance >= d_thr or distance < 1e-9:
            continue
        cos_theta = float(offset @ heading) / (distance * heading_norm)
        if math.acos(max(-1.0, min(1.0, cos_theta))) >= 0.5 * math.pi:
            continue
        if not grid.bounds.contains(vp.p) or not segments_clear(grid, p0, vp.p[None, :], occupied)[0]:
            continue
        kept.append(vp)
    return kept


def find_middle_yaw(candidates: Sequence[Viewpoint], xi0: float) -> Viewpoint:
    """Candidate with the largest yaw change from xi0; ties by coverage, then lower cluster id"""
    if not candidates:
        raise EmptyCandidates("no candidate viewpoints for the middle yaw")
    return min(candidates, key=lambda v: (-round(yaw_change(xi0, v.yaw), 12), -v.coverage, v.cluster_id))


def estimate_min_yaw_time(xi0: float, xim: float, xie: float, yaw_rate_max: float, tau: float) -> YawTiming:
    if not yaw_rate_max > 0:
        raise ValueError("yaw_rate_max must be positive")
    if tau < 1.0:
        raise ValueError("tau must be >= 1")
    t1 = yaw_change(xi0, xim) / yaw_rate_max
    t2 = yaw_change(xim, xie) / yaw_rate_max
    total = t1 + t2
    ratio = t1 / total if total > 0 else 0.5
    return YawTiming(t1, t2, tau * total, ratio)


PositionPlanner = Callable[[float], TrajectoryResult]


def plan_yaw(inp: YawPlanInput, position_planner: PositionPlanner, limits: KinoLimits,
             grid: VoxelGrid, two_stage: bool = True, gammas: Sequence[float] = (1.0, 10.0, 10.0, 1.0),
             yaw_knot_span: float = 0.25) -> Tuple[YawPlan, TrajectoryResult]:
    """
    Adaptive yaw planning for one local flight.

    With extra local viewpoints and either a turn that fits in the nominal
    flight time to the target or a likely small area, the yaw first turns
    toward the extra viewpoint with the largest yaw change and then to the
    target yaw. Otherwise one segment turns straight to the target yaw.

    The nominal time depends only on the distance, so a hovering drone gets
    no extra slack for a wide turn.

    Args:
        inp: Viewpoints, target, start state and target cost features
        position_planner: Plans the position trajectory for a minimum duration
        limits: Speed and yaw rate/acceleration limits
        grid: Map for the intervisibility test
        two_stage: False forces single-segment planning

    Returns:
        (YawPlan, position trajectory)

    Raises:
        PlanningFailed: propagated from the position planner
    """
    xi0 = inp.state.yaw
    xie = inp.target.yaw
    extras = viewpoints_in_local(inp.viewpoints, inp.state.position, inp.target, inp.d_thr, grid) \
        if two_stage else []

    if extras:
        middle = find_middle_yaw(extras, xi0)
        timing = estimate_min_yaw_time(xi0, middle.yaw, xie, limits.yaw_rate_max, inp.tau)
        reach_time = allocate_time(inp.distance, limits)
        if timing.t_min <= reach_time or inp.small_area_prob > SMALL_AREA_THRESHOLD:
            trajectory = position_planner(timing.t_min)
            t_real = trajectory.duration
            first = t_real * timing.ratio
            second = t_real - first
            if t_real >= timing.t_min - 1e-9 and min(first, second) >= MIN_STAGE_DURATION:
                y1 = optimize_yaw_trajectory(xi0, middle.yaw, first, limits, gammas, yaw_knot_span)
                junction = float(y1.evaluate(y1.duration)[0])
                y2 = optimize_yaw_trajectory(junction, xie, second, limits, gammas, yaw_knot_span)
                plan = YawPlan(YawMode.TWO_STAGE, [y1, y2], float(wrap_angle(middle.yaw)), timing.ratio,
                               len(extras))
                return plan, trajectory

    t_floor = inp.tau * yaw_change(xi0, xie) / limits.yaw_rate_max
    trajectory = position_planner(t_floor)
    segment = optimize_yaw_trajectory(xi0, xie, trajectory.duration, limits, gammas, yaw_knot_span)
    return YawPlan(YawMode.NORMAL, [segment], extra_viewpoints=len(extras)), trajectory


class YawPlanner(BasePlanner):
    def __init__(self, grid: VoxelGrid, limits: KinoLimits, config: YawConfig, sensor_range: float,
                 two_stage: bool = True, yaw_knot_span: float = 0.25):
        """Mode selection between normal and two-stage yaw planning"""
        super().__init__()
        self.grid = grid
        self.limits = limits
        self.config = config
        self.d_thr = config.d_thr if config.d_thr is not None else 0.8 * sensor_range
        self.two_stage = two_stage
        self.yaw_knot_span = yaw_knot_span

    def plan(self, viewpoints: Sequence[Viewpoint], target: Viewpoint, state: DroneState,
             small_area_prob: float, position_planner: PositionPlanner) -> Tuple[YawPlan, TrajectoryResult]:
        distance = float(np.linalg.norm(target.p - state.position))
        inp = YawPlanInput(viewpoints, target, state, distance, small_area_prob, self.d_thr, self.config.tau)
        plan, trajectory = plan_yaw(inp, position_planner, self.limits, self.grid, self.two_stage,
                                    self.config.gammas, self.yaw_knot_span)
        if plan.mode is YawMode.TWO_STAGE:
            self.logger.debug(f"two-stage yaw via {plan.middle_yaw:.2f} rad, R={plan.ratio:.2f}")
        return plan, trajectory
