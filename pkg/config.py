from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Any, Dict, Optional, Tuple, Union, get_args, get_origin, get_type_hints
import json
import math
import os

from errors import ConfigError
from planners.tour_planner import TourWeights
from planners.trajectory_planner import KinoLimits, TrajectoryParams
from planners.yaw_planner import YawConfig
from services.frontier_service import ViewpointParams
from services.grid_world import SensorModel

VARIANTS = ('full', 'no-yaw', 'no-frontier-costs', 'all-off')
SCENARIO_TYPES = ('empty', 'maze1', 'maze2', 'outdoor', 'corridor')


@dataclass(frozen=True)
class SensorConfig:
    fov_h_deg: float = 80.0
    fov_v_deg: float = 60.0
    range: float = 4.5
    ray_step: Optional[float] = None

    def to_model(self) -> SensorModel:
        return SensorModel(math.radians(self.fov_h_deg), math.radians(self.fov_v_deg), self.range,
                           self.ray_step)


@dataclass(frozen=True)
class ReplanConfig:
    rho: float = 1.5
    t_min: float = 0.05
    dt_sim: float = 0.05
    remaining: float = 1.0
    cooldown: float = 0.5
    target_vanish_ratio: float = 0.5
    failures_before_block: int = 3
    max_global_retries: int = 10
    candidates: int = 3
    deterministic_plan_time: Optional[float] = None


@dataclass(frozen=True)
class AblationFlags:
    two_stage_yaw: bool = True
    boundary_cost: bool = True
    small_area: bool = True


@dataclass(frozen=True)
class RunConfig:
    scenario: Optional[str] = None
    scenario_type: Optional[str] = None
    world_seed: int = 0
    resolution: Optional[float] = None
    seed: int = 0
    start_jitter: float = 0.5
    time_cap: float = 600.0
    out_dir: str = field(default_factory=lambda: os.getenv('FAEP_OUT_DIR', 'out'))
    dump_frontiers: bool = False
    sensor: SensorConfig = SensorConfig()
    limits: KinoLimits = KinoLimits()
    tour: TourWeights = TourWeights()
    yaw: YawConfig = YawConfig()
    replan: ReplanConfig = ReplanConfig()
    ablation: AblationFlags = AblationFlags()
    trajectory: TrajectoryParams = TrajectoryParams()
    viewpoints: ViewpointParams = ViewpointParams()

    def to_dict(self) -> Dict[str, Any]:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        """Build from a nested dict; unknown keys and wrong types raise ConfigError"""
        config = _build(cls, data, '')
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str) -> 'RunConfig':
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                data = json.load(handle)
        except json.JSONDecodeError as e:
            raise ConfigError('config', f"malformed JSON at line {e.lineno} column {e.colno}: {e.msg}")
        except OSError as e:
            raise ConfigError('config', f"cannot read {path}: {e.strerror}")
        return cls.from_dict(data)

    def with_overrides(self, overrides: Dict[str, Any]) -> 'RunConfig':
        """Apply dotted-path overrides such as {'tour.w_c': 2.0}; None values are skipped"""
        data = self.to_dict()
        for path, value in overrides.items():
            if value is None:
                continue
            node = data
            parts = path.split('.')
            for part in parts[:-1]:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(path, 'unknown configuration key')
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(path, 'unknown configuration key')
            node[parts[-1]] = list(value) if isinstance(value, tuple) else value
        return RunConfig.from_dict(data)

    def with_variant(self, variant: str) -> 'RunConfig':
        if variant not in VARIANTS:
            raise ConfigError('variant', f"expected one of {', '.join(VARIANTS)}, got {variant!r}")
        flags = {
            'full': AblationFlags(),
            'no-yaw': AblationFlags(two_stage_yaw=False),
            'no-frontier-costs': AblationFlags(boundary_cost=False, small_area=False),
            'all-off': AblationFlags(False, False, False),
        }[variant]
        return replace(self, ablation=flags)

    def resolved(self, scenario_resolution: float) -> 'RunConfig':
        """Fill every derived default so the echo lists each effective value"""
        resolution = self.resolution if self.resolution is not None else scenario_resolution
        sensor = self.sensor
        if sensor.ray_step is None:
            sensor = replace(sensor, ray_step=resolution / 2.0)
        tour = replace(
            self.tour,
            d_thr=self.tour.d_thr if self.tour.d_thr is not None else 2.0 * sensor.range,
            v_max=self.limits.v_max,
            yaw_rate_max=self.limits.yaw_rate_max,
            w_b=self.tour.w_b if self.ablation.boundary_cost else 0.0,
            w_f=self.tour.w_f if self.ablation.small_area else 0.0,
        )
        yaw = self.yaw
        if yaw.d_thr is None:
            yaw = replace(yaw, d_thr=0.8 * sensor.range)
        config = replace(self, resolution=resolution, sensor=sensor, tour=tour, yaw=yaw)
        config.validate()
        return config

    def validate(self) -> None:
        _check(self.time_cap > 0, 'time_cap', 'must be positive')
        _check(self.start_jitter >= 0, 'start_jitter', 'must be non-negative')
        _check(self.resolution is None or self.resolution > 0, 'resolution', 'must be positive')
        _check(self.scenario_type is None or self.scenario_type in SCENARIO_TYPES, 'scenario_type',
               f"expected one of {', '.join(SCENARIO_TYPES)}")
        s = self.sensor
        _check(0 < s.fov_h_deg < 180, 'sensor.fov_h_deg', 'must lie in (0, 180)')
        _check(0 < s.fov_v_deg < 180, 'sensor.fov_v_deg', 'must lie in (0, 180)')
        _check(s.range > 0, 'sensor.range', 'must be positive')
        if s.ray_step is not None:
            _check(s.ray_step > 0, 'sensor.ray_step', 'must be positive')
            if self.resolution is not None:
                _check(s.ray_step <= self.resolution, 'sensor.ray_step', 'must not exceed the resolution')
        for section in ('limits', 'tour'):
            try:
                getattr(self, section).validate()
            except ValueError as e:
                raise ConfigError(section, str(e))
        try:
            self.yaw.validate(s.range)
        except ValueError as e:
            raise ConfigError('yaw', str(e))
        r = self.replan
        _check(r.rho > 0, 'replan.rho', 'must be positive')
        _check(r.t_min > 0, 'replan.t_min', 'must be positive')
        _check(r.dt_sim > 0, 'replan.dt_sim', 'must be positive')
        _check(r.remaining > 0, 'replan.remaining', 'must be positive')
        _check(r.cooldown >= 0, 'replan.cooldown', 'must be non-negative')
        _check(0 < r.target_vanish_ratio <= 1, 'replan.target_vanish_ratio', 'must lie in (0, 1]')
        _check(r.failures_before_block >= 1, 'replan.failures_before_block', 'must be >= 1')
        _check(r.max_global_retries >= 0, 'replan.max_global_retries', 'must be >= 0')
        _check(r.candidates >= 1, 'replan.candidates', 'must be >= 1')
        _check(r.deterministic_plan_time is None or r.deterministic_plan_time >= 0,
               'replan.deterministic_plan_time', 'must be non-negative')
        t = self.trajectory
        _check(t.inflation >= 0, 'trajectory.inflation', 'must be non-negative')
        _check(t.max_knot_span > 0, 'trajectory.max_knot_span', 'must be positive')
        _check(0 < t.time_margin <= 1, 'trajectory.time_margin', 'must lie in (0, 1]')
        _check(t.max_iterations >= 1, 'trajectory.max_iterations', 'must be >= 1')
        _check(t.distance_cap > t.inflation, 'trajectory.distance_cap', 'must exceed trajectory.inflation')
        _check(t.yaw_knot_span > 0, 'trajectory.yaw_knot_span', 'must be positive')
        v = self.viewpoints
        _check(len(v.radii) > 0 and all(r_ > 0 for r_ in v.radii), 'viewpoints.radii', 'must be positive')
        _check(v.azimuth_steps >= 1, 'viewpoints.azimuth_steps', 'must be >= 1')
        _check(0 < v.tie_tier <= 1, 'viewpoints.tie_tier', 'must lie in (0, 1]')


def _check(condition: bool, name: str, message: str) -> None:
    if not condition:
        raise ConfigError(name, message)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _convert(tp: Any, value: Any, path: str) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        options = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _convert(options[0], value, path)
    if is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, 'expected an object')
        return _build(tp, value, path)
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        args = get_args(tp)
        inner = args[0] if args else float
        if len(args) > 1 and args[1] is not Ellipsis:
            if len(value) != len(args):
                raise ConfigError(path, f"expected {len(args)} values, got {len(value)}")
        return tuple(_convert(inner, v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: Dict[str, Any], path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or 'config', 'expected an object')
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, 'unknown configuration key')
    kwargs = {}
    for name in known:
        if name in data:
            kwargs[name] = _convert(hints[name], data[name], f"{path}.{name}" if path else name)
    return cls(**kwargs)


def env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(name, f"expected an integer, got {raw!r}")
