from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple
import math
import time

import numpy as np

from config import RunConfig
from errors import ConfigError, PlanningFailed, PoseInvalid, Stuck, TimeCapExceeded
from planners.base_planner import BasePlanner, DroneState
from planners.bspline import UniformBSpline
from planners.tour_planner import TourPlanner
from planners.trajectory_planner import TrajectoryPlanner, TrajectoryResult
from planners.yaw_planner import YawMode, YawPlan, YawPlanner
from services.frontier_service import FrontierCluster, FrontierStore, yaw_change
from services.grid_world import CellState, Scenario, VoxelGrid, sense, world_to_cell, wrap_angle
from services.scenario_service import jitter_start, reachable_free_mask

AT_VIEWPOINT_DISTANCE = 0.3
AT_VIEWPOINT_YAW = 0.1
TRACE_DECIMALS = 6
COVERAGE_SAMPLE_PERIOD = 1.0

TRACE_COLUMNS = ('t', 'x', 'y', 'z', 'yaw', 'vx', 'vy', 'vz', 'coverage_m3', 'event')


def compute_replan_budget(t_prev: float, rho: float, t_min: float) -> float:
    """Time ahead of the clock where the next plan starts: max(rho * t_prev, t_min)"""
    if t_prev < 0:
        raise ValueError(f"t_prev must be non-negative, got {t_prev}")
    return max(rho * t_prev, t_min)


@dataclass
class ActiveTrajectory:
    start_time: float
    position: UniformBSpline
    yaw: YawPlan
    target_id: int = -1

    @property
    def duration(self) -> float:
        return self.position.duration

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def state_at(self, t: float) -> DroneState:
        """Kinematic state at absolute time t; past the end the drone rests at the goal"""
        local = min(max(t - self.start_time, 0.0), self.duration)
        yaw = float(wrap_angle(self.yaw.evaluate(min(local, self.yaw.duration))))
        if local >= self.duration:
            return DroneState(self.position.evaluate(self.duration), yaw)
        return DroneState(self.position.evaluate(local), yaw,
                          self.position.evaluate(local, 1), self.position.evaluate(local, 2))


@dataclass
class MissionState:
    clock: float
    drone: DroneState
    current: Optional[ActiveTrajectory] = None
    pending: Optional[ActiveTrajectory] = None
    last_plan_duration: float = 0.0
    last_replan_clock: float = -math.inf
    target_id: Optional[int] = None
    target_cells: Optional[np.ndarray] = None
    flight_distance: float = 0.0
    coverage_m3: float = 0.0
    replans: int = 0
    planning_durations: List[float] = field(default_factory=list)
    latencies: List[float] = field(default_factory=list)
    budgets: List[float] = field(default_factory=list)
    failures: Dict[int, int] = field(default_factory=dict)
    blocked: Set[int] = field(default_factory=set)
    global_retries: int = 0
    safety_violations: int = 0
    coverage_series: List[Tuple[float, float]] = field(default_factory=list)
    trace: List[Dict[str, Any]] = field(default_factory=list)
    polyline: List[List[float]] = field(default_factory=list)
    splice_gaps: List[Dict[str, float]] = field(default_factory=list)
    yaw_modes: Dict[str, int] = field(default_factory=lambda: {m.value: 0 for m in YawMode})
    frontier_records: List[Dict[str, Any]] = field(default_factory=list)
    status: str = 'running'

    @property
    def finished(self) -> bool:
        return self.status != 'running'


@dataclass
class MissionReport:
    status: str
    scenario: str
    seed: int
    world_seed: int
    start_pose: Dict[str, Any]
    exploration_time: float
    flight_distance: float
    coverage_m3: float
    coverage_ratio: float
    reachable_free_m3: float
    replans: int
    planning_durations: List[float]
    budgets: List[float]
    latency: Dict[str, Any]
    safety_violations: int
    yaw_modes: Dict[str, int]
    splice_gaps: List[Dict[str, float]]
    coverage_series: List[List[float]]
    polyline: List[List[float]]
    config: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _percentile(values: Sequence[float], q: float) -> float:
    return float(np.percentile(values, q)) if len(values) else 0.0


class ExplorationPlanner(BasePlanner):
    def __init__(self, scenario: Scenario, config: RunConfig):
        """
        Sense, frontier update, global tour and local planning loop over
        a simulated drone that follows its trajectories exactly.

        Args:
            scenario: Ground-truth world and nominal start pose
            config: Run configuration; derived defaults are resolved here
        """
        super().__init__()
        self.config = config.resolved(scenario.resolution)
        cfg = self.config
        self.scenario = scenario
        self.world = scenario.world
        self.grid = VoxelGrid(scenario.world.bounds, cfg.resolution, cfg.trajectory.distance_cap)
        self.sensor = cfg.sensor.to_model()
        try:
            self.sensor.validate(cfg.resolution)
        except ValueError as e:
            raise ConfigError('sensor', str(e))
        self.store = FrontierStore(self.grid, self.sensor, cfg.viewpoints)
        self.tour = TourPlanner(self.grid, cfg.tour, self.sensor.range)
        self.trajectory = TrajectoryPlanner(self.grid, cfg.limits, cfg.trajectory)
        self.yaw = YawPlanner(self.grid, cfg.limits, cfg.yaw, self.sensor.range,
                              cfg.ablation.two_stage_yaw, cfg.trajectory.yaw_knot_span)
        self.start_pose = jitter_start(scenario, cfg.seed, cfg.start_jitter)
        self.state = MissionState(0.0, DroneState.at_rest(self.start_pose))
        self._reachable = reachable_free_mask(self.world, self.grid, self.start_pose.p)
        self._next_coverage_sample = 0.0

    def candidates(self) -> List[FrontierCluster]:
        """Active clusters not blocked by repeated planning failures"""
        return [c for c in self.store.active_clusters() if c.id not in self.state.blocked]

    def planning_start_state(self, t_i: float) -> DroneState:
        """State the drone will be in t_i seconds from now"""
        s = self.state
        at = s.clock + t_i
        if s.pending is not None and s.pending.start_time <= at:
            return s.pending.state_at(at)
        if s.current is not None:
            return s.current.state_at(at)
        return DroneState(s.drone.position.copy(), s.drone.yaw)

    def coverage_ratio(self) -> Tuple[float, float]:
        """(known fraction of the reachable free volume, reachable free volume in m^3)"""
        reachable = int(np.count_nonzero(self._reachable))
        if reachable == 0:
            return 1.0, 0.0
        known = int(np.count_nonzero(self._reachable & (self.grid.cells != CellState.UNKNOWN)))
        return known / reachable, reachable * self.grid.cell_volume

    def _sense(self) -> None:
        pose = self.state.drone.pose
        try:
            result = sense(self.grid, self.world, self.sensor, pose)
        except PoseInvalid as e:
            self.handle_error(e, {'method': 'sense', 't': round(self.state.clock, 3)})
            return
        if result.changed:
            self.store.update(result.region)
        dormant = self.store.sample_dirty(pose)
        if dormant:
            self.logger.debug(f"clusters without a viewpoint: {dormant}")
        # Known cells never revert, so the volume is monotone
        self.state.coverage_m3 = max(self.state.coverage_m3, self.grid.known_volume())

    def _check_safety(self, position: np.ndarray) -> None:
        cell = world_to_cell(self.grid, position)
        hit = bool(self.world.contains(position))
        if cell is not None and self.grid.cells[cell] == CellState.OCCUPIED:
            hit = True
        if hit:
            self.state.safety_violations += 1
            self.logger.error(f"drone inside an obstacle at t={self.state.clock:.2f}, p={np.round(position, 3).tolist()}")

    def _record(self, event: str) -> None:
        s = self.state
        d = s.drone
        row = [s.clock, d.position[0], d.position[1], d.position[2], d.yaw,
               d.velocity[0], d.velocity[1], d.velocity[2], s.coverage_m3]
        values = [round(float(v), TRACE_DECIMALS) + 0.0 for v in row]
        s.trace.append(dict(zip(TRACE_COLUMNS, values + [event])))
        s.polyline.append(values[1:4])
        if s.clock + 1e-9 >= self._next_coverage_sample:
            s.coverage_series.append([values[0], values[8]])
            self._next_coverage_sample += COVERAGE_SAMPLE_PERIOD

    def _stuck(self, message: str) -> Stuck:
        self.state.status = 'stuck'
        error = Stuck(message)
        error.report = self.report().to_dict()
        return error

    def _exhausted(self) -> bool:
        """True once nothing is left to explore; blocked clusters get another round first"""
        s = self.state
        if self.candidates():
            return False
        if not s.blocked:
            return True
        s.global_retries += 1
        if s.global_retries > self.config.replan.max_global_retries:
            raise self._stuck(f"clusters {sorted(s.blocked)} unreachable after "
                              f"{self.config.replan.max_global_retries} retries")
        self.logger.warning(f"only blocked clusters left, retrying {sorted(s.blocked)} "
                            f"({s.global_retries}/{self.config.replan.max_global_retries})")
        s.blocked.clear()
        s.failures.clear()
        return False

    def replan_reason(self) -> Optional[str]:
        """Which replanning trigger fires at the current clock, if any"""
        s = self.state
        cfg = self.config.replan
        if s.pending is not None:
            return None
        if s.current is None or s.clock >= s.current.end_time - 1e-9:
            return 'idle'
        if s.target_cells is not None and len(s.target_cells):
            alive = float(np.mean(self.store.still_frontier(s.target_cells)))
            if alive < cfg.target_vanish_ratio:
                return 'target_vanished'
        remaining = s.current.end_time - s.clock
        if remaining < cfg.remaining and s.clock - s.last_replan_clock >= cfg.cooldown - 1e-9:
            return 'remaining'
        return None

    def _at_viewpoint(self, start: DroneState, cluster: FrontierCluster) -> bool:
        vp = cluster.best_viewpoint
        return (float(np.linalg.norm(vp.p - start.position)) < AT_VIEWPOINT_DISTANCE
                and yaw_change(start.yaw, vp.yaw) < AT_VIEWPOINT_YAW)

    def _plan_local(self, cluster: FrontierCluster, clusters: Sequence[FrontierCluster],
                    start: DroneState) -> Tuple[YawPlan, TrajectoryResult]:
        target = cluster.best_viewpoint
        others = [c.best_viewpoint for c in clusters if c.id != cluster.id]

        def position_planner(t_floor: float) -> TrajectoryResult:
            return self.trajectory.plan(start, target.p, t_floor)

        return self.yaw.plan(others, target, start, cluster.small_area_prob, position_planner)

    def replan(self, reason: str) -> Optional[str]:
        """
        Pick the local target from the global tour and plan a trajectory to
        its best viewpoint, starting t_i seconds ahead of the clock.

        Returns:
            'replan' on success, 'replan_failed' when every candidate failed,
            None when nothing was attempted

        Raises:
            Stuck: too many consecutive rounds without a plan
        """
        s = self.state
        cfg = self.config.replan
        budget = compute_replan_budget(s.last_plan_duration, cfg.rho, cfg.t_min)
        started = time.perf_counter()
        start = self.planning_start_state(budget)
        splice_time = s.clock + budget

        self.store.reselect(start.pose)
        clusters = self.candidates()
        if not clusters:
            return None
        self.tour.refresh_costs(clusters, start.position)
        tour = self.tour.plan(clusters, start)
        by_id = {c.id: c for c in clusters}

        planned: Optional[Tuple[FrontierCluster, YawPlan, TrajectoryResult]] = None
        attempts = 0
        for cluster_id in tour.sequence:
            if attempts >= cfg.candidates:
                break
            cluster = by_id[cluster_id]
            if self._at_viewpoint(start, cluster):
                # Already looked from there and the frontier persists
                cluster.dormant = True
                self.logger.debug(f"cluster {cluster_id} unresolved from its own viewpoint, now dormant")
                continue
            attempts += 1
            try:
                yaw_plan, trajectory = self._plan_local(cluster, clusters, start)
                planned = (cluster, yaw_plan, trajectory)
                break
            except PlanningFailed as e:
                self.handle_error(e, {'method': 'replan', 'cluster': cluster_id, 't': round(s.clock, 3)})
                s.failures[cluster_id] = s.failures.get(cluster_id, 0) + 1
                if s.failures[cluster_id] >= cfg.failures_before_block:
                    s.blocked.add(cluster_id)
                    self.logger.warning(f"cluster {cluster_id} blocked after {s.failures[cluster_id]} failures")

        elapsed = time.perf_counter() - started
        if attempts == 0:
            return None
        t_plan = cfg.deterministic_plan_time if cfg.deterministic_plan_time is not None else elapsed
        s.latencies.append(elapsed)
        s.planning_durations.append(t_plan)
        s.budgets.append(budget)
        s.last_plan_duration = t_plan
        s.last_replan_clock = s.clock

        if planned is None:
            s.global_retries += 1
            if s.global_retries > cfg.max_global_retries:
                raise self._stuck(f"no plan for any of the first {cfg.candidates} clusters "
                                  f"after {cfg.max_global_retries} retries")
            return 'replan_failed'

        cluster, yaw_plan, trajectory = planned
        new = ActiveTrajectory(splice_time, trajectory.spline, yaw_plan, cluster.id)
        head = new.state_at(splice_time)
        s.splice_gaps.append({
            't': round(splice_time, TRACE_DECIMALS),
            'position': float(np.linalg.norm(head.position - start.position)),
            'velocity': float(np.linalg.norm(head.velocity - start.velocity)),
            'yaw': yaw_change(head.yaw, start.yaw),
        })
        s.pending = new
        s.target_id = cluster.id
        s.target_cells = cluster.cells.copy()
        s.failures.pop(cluster.id, None)
        s.global_retries = 0
        s.replans += 1
        s.yaw_modes[yaw_plan.mode.value] += 1
        if self.config.dump_frontiers:
            s.frontier_records.extend(self.store.records(round(s.clock, TRACE_DECIMALS)))
        self.logger.info(f"replan {s.replans} ({reason}) at {self.format_duration(s.clock)}: cluster {cluster.id}, "
                         f"{yaw_plan.mode.value} yaw, {self.format_duration(trajectory.duration)} flight, "
                         f"latency {self.format_latency(elapsed)}")
        return 'replan'

    def _promote(self) -> bool:
        s = self.state
        if s.pending is not None and s.pending.start_time <= s.clock + 1e-9:
            s.current = s.pending
            s.pending = None
            return True
        return False

    def start(self) -> None:
        """Initial sensing at the start pose"""
        self._sense()
        self._record('start')

    def step(self) -> List[str]:
        """
        Advance the simulated clock by one step and react to what the drone sees.

        Returns:
            Events of this step (splice, replan, replan_failed, complete)
        """
        s = self.state
        events: List[str] = []
        s.clock = round(s.clock + self.config.replan.dt_sim, 9)
        if self._promote():
            events.append('splice')
        previous = s.drone.position
        if s.current is not None:
            s.drone = s.current.state_at(s.clock)
        s.flight_distance += float(np.linalg.norm(s.drone.position - previous))
        self._check_safety(s.drone.position)
        self._sense()

        if self._exhausted():
            s.status = 'complete'
            events.append('complete')
        else:
            reason = self.replan_reason()
            if reason is not None:
                outcome = self.replan(reason)
                if outcome is not None:
                    events.append(outcome)
                if self._promote():
                    events.append('splice')
        self._record(';'.join(events))
        return events

    def run(self) -> MissionReport:
        """
        Explore until no candidate cluster is left or the time cap is hit.

        Raises:
            Stuck: with the partial report attached
            TimeCapExceeded: with the partial report attached
        """
        cfg = self.config
        self.logger.info(f"mission {self.scenario.name} seed {cfg.seed}: start "
                         f"{np.round(self.start_pose.p, 3).tolist()}, yaw {self.start_pose.yaw:.2f}")
        self.start()
        if self._exhausted():
            self.state.status = 'complete'
            self.state.trace[-1]['event'] = 'start;complete'
        while not self.state.finished:
            if self.state.clock >= cfg.time_cap - 1e-9:
                self.state.status = 'time_cap'
                self.state.trace[-1]['event'] = ';'.join(filter(None, [self.state.trace[-1]['event'], 'time_cap']))
                report = self.report()
                self.logger.error(f"time cap {self.format_duration(cfg.time_cap)} reached at "
                                  f"{report.coverage_ratio:.1%} coverage")
                raise TimeCapExceeded(f"time cap of {cfg.time_cap} s reached", report.to_dict())
            try:
                self.step()
            except Stuck as e:
                self.state.trace[-1]['event'] = ';'.join(filter(None, [self.state.trace[-1]['event'], 'stuck']))
                e.report = self.report().to_dict()
                self.logger.error(f"mission aborted: {e}")
                raise
        report = self.report()
        self.logger.info(f"mission complete in {self.format_duration(report.exploration_time)}, "
                         f"{self.format_distance(report.flight_distance)}, {report.coverage_m3:.1f} m^3 "
                         f"({report.coverage_ratio:.1%}), {report.replans} replans")
        return report

    def report(self) -> MissionReport:
        s = self.state
        ratio, reachable = self.coverage_ratio()
        latencies_ms = [v * 1000.0 for v in s.latencies]
        return MissionReport(
            status=s.status,
            scenario=self.scenario.name,
            seed=self.config.seed,
            world_seed=self.config.world_seed,
            start_pose={'position': [float(v) for v in self.start_pose.position], 'yaw': self.start_pose.yaw},
            exploration_time=round(s.clock, TRACE_DECIMALS),
            flight_distance=s.flight_distance,
            coverage_m3=s.coverage_m3,
            coverage_ratio=ratio,
            reachable_free_m3=reachable,
            replans=s.replans,
            planning_durations=list(s.planning_durations),
            budgets=list(s.budgets),
            latency={
                'mean_ms': float(np.mean(latencies_ms)) if latencies_ms else 0.0,
                'p95_ms': _percentile(latencies_ms, 95),
                'max_ms': max(latencies_ms, default=0.0),
                'samples_ms': latencies_ms,
            },
            safety_violations=s.safety_violations,
            yaw_modes=dict(s.yaw_modes),
            splice_gaps=list(s.splice_gaps),
            coverage_series=[list(p) for p in s.coverage_series],
            polyline=[list(p) for p in s.polyline],
            config=self.config.to_dict(),
        )
