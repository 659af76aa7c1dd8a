from typing import Any, Dict, List, Optional, Sequence
import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from config import SCENARIO_TYPES, VARIANTS, RunConfig, env_int
from errors import ConfigError, GenerationFailed
from services.batch_service import BatchService, batch_exit_code, run_mission
from services.grid_world import Scenario, load_scenario, save_scenario
from services.scenario_service import generate, preset

# Load environment variables
load_dotenv()

logger = logging.getLogger('faep')

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STUCK = 2
EXIT_TIME_CAP = 3
STATUS_EXIT = {'complete': EXIT_OK, 'stuck': EXIT_STUCK, 'time_cap': EXIT_TIME_CAP}

LOG_LEVELS = {'debug': logging.DEBUG, 'info': logging.INFO, 'warning': logging.WARNING, 'error': logging.ERROR}

# CLI flag -> dotted config path
OVERRIDES = {
    'scenario': 'scenario',
    'type': 'scenario_type',
    'world_seed': 'world_seed',
    'resolution': 'resolution',
    'seed': 'seed',
    'start_jitter': 'start_jitter',
    'time_cap': 'time_cap',
    'out': 'out_dir',
    'fov_h': 'sensor.fov_h_deg',
    'fov_v': 'sensor.fov_v_deg',
    'range': 'sensor.range',
    'v_max': 'limits.v_max',
    'a_max': 'limits.a_max',
    'yaw_rate_max': 'limits.yaw_rate_max',
    'yaw_acc_max': 'limits.yaw_acc_max',
    'w_c': 'tour.w_c',
    'w_b': 'tour.w_b',
    'w_f': 'tour.w_f',
    'w_d': 'tour.w_d',
    'd_thr': 'tour.d_thr',
    'h_max': 'tour.h_max',
    'yaw_d_thr': 'yaw.d_thr',
    'tau': 'yaw.tau',
    'rho': 'replan.rho',
    't_min': 'replan.t_min',
    'dt_sim': 'replan.dt_sim',
    'deterministic_plan_time': 'replan.deterministic_plan_time',
}
FLAG_OVERRIDES = {
    'dump_frontiers': ('dump_frontiers', True),
    'no_two_stage_yaw': ('ablation.two_stage_yaw', False),
    'no_boundary_cost': ('ablation.boundary_cost', False),
    'no_small_area': ('ablation.small_area', False),
}


def setup_logging(level_name: Optional[str] = None) -> None:
    """Root logger to stderr; level from FAEP_LOG (debug|info|warning|error)"""
    name = (level_name or os.getenv('FAEP_LOG', 'info')).lower()
    logging.basicConfig(
        level=LOG_LEVELS.get(name, logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        stream=sys.stderr,
        force=True,
    )


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='JSON run configuration; CLI flags take precedence')
    parser.add_argument('--scenario', help='scenario JSON file')
    parser.add_argument('--type', choices=SCENARIO_TYPES, help='generate a preset scenario instead of --scenario')
    parser.add_argument('--world-seed', type=int, help='seed for the preset generator')
    parser.add_argument('--resolution', type=float, help='voxel size (m)')
    parser.add_argument('--start-jitter', type=float, help='start perturbation radius (m)')
    parser.add_argument('--time-cap', type=float, help='simulated time cap (s)')
    parser.add_argument('--out', help='output directory')
    parser.add_argument('--dump-frontiers', action='store_true', help='write frontiers.jsonl at each replan')

    sensor = parser.add_argument_group('sensor')
    sensor.add_argument('--fov-h', type=float, help='horizontal FOV (deg)')
    sensor.add_argument('--fov-v', type=float, help='vertical FOV (deg)')
    sensor.add_argument('--range', type=float, help='sensor range (m)')

    limits = parser.add_argument_group('kinematic limits')
    limits.add_argument('--v-max', type=float)
    limits.add_argument('--a-max', type=float)
    limits.add_argument('--yaw-rate-max', type=float)
    limits.add_argument('--yaw-acc-max', type=float)

    tour = parser.add_argument_group('tour weights')
    tour.add_argument('--w-c', type=float, help='velocity-direction weight')
    tour.add_argument('--w-b', type=float, help='boundary-cost weight')
    tour.add_argument('--w-f', type=float, help='small-area weight')
    tour.add_argument('--w-d', type=float, help='boundary distance weight')
    tour.add_argument('--d-thr', type=float, help='distance below which the small-area ray is cast (m)')
    tour.add_argument('--h-max', type=float, help='bottom ray length (m)')

    yaw = parser.add_argument_group('yaw')
    yaw.add_argument('--yaw-d-thr', type=float, help='extra viewpoint radius (m)')
    yaw.add_argument('--tau', type=float, help='yaw time stretch (>= 1)')

    replan = parser.add_argument_group('replanning')
    replan.add_argument('--rho', type=float)
    replan.add_argument('--t-min', type=float)
    replan.add_argument('--dt-sim', type=float)
    replan.add_argument('--deterministic-plan-time', type=float,
                        help='use this planning duration (s) instead of the wall clock')

    ablation = parser.add_argument_group('ablation')
    ablation.add_argument('--no-two-stage-yaw', action='store_true')
    ablation.add_argument('--no-boundary-cost', action='store_true')
    ablation.add_argument('--no-small-area', action='store_true')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='faep', description='Frontier exploration planner simulator')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='run one exploration mission')
    _add_run_options(run)
    run.add_argument('--seed', type=int, help='run seed (start perturbation)')

    gen = commands.add_parser('gen', help='write a preset scenario to JSON')
    gen.add_argument('--type', choices=SCENARIO_TYPES, required=True)
    gen.add_argument('--seed', type=int, default=0, help='generator seed')
    gen.add_argument('--resolution', type=float)
    gen.add_argument('--out', required=True, help='scenario file to write')

    batch = commands.add_parser('batch', help='run seeds x variants and write summary.csv')
    _add_run_options(batch)
    batch.add_argument('--seeds', default='0', help="comma list and ranges, e.g. '1,2,5-8'")
    batch.add_argument('--variants', default=','.join(VARIANTS), help=f"comma list of {', '.join(VARIANTS)}")
    batch.add_argument('--workers', type=int, help='parallel missions (default FAEP_WORKERS or 1)')
    return parser


def parse_seeds(text: str) -> List[int]:
    seeds: List[int] = []
    try:
        for part in filter(None, (p.strip() for p in text.split(','))):
            if '-' in part:
                lo, hi = part.split('-', 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise ConfigError('seeds', f"expected integers or ranges, got {text!r}")
    if not seeds:
        raise ConfigError('seeds', 'no seeds given')
    return seeds


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the --config file, then explicit CLI flags"""
    config = RunConfig.from_file(args.config) if getattr(args, 'config', None) else RunConfig()
    overrides: Dict[str, Any] = {}
    for flag, path in OVERRIDES.items():
        overrides[path] = getattr(args, flag, None)
    for flag, (path, value) in FLAG_OVERRIDES.items():
        if getattr(args, flag, False):
            overrides[path] = value
    return config.with_overrides(overrides)


def resolve_scenario(config: RunConfig) -> Scenario:
    if config.scenario:
        return load_scenario(config.scenario)
    if config.scenario_type:
        return generate(preset(config.scenario_type, config.world_seed))
    raise ConfigError('scenario', 'give --scenario <file> or --type <preset>')


def cmd_run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    scenario = resolve_scenario(config)
    outcome = run_mission(scenario, config, config.out_dir)
    if outcome.status != 'complete':
        print(f"{outcome.status}: {outcome.error}", file=sys.stderr)
    return STATUS_EXIT[outcome.status]


def cmd_gen(args: argparse.Namespace) -> int:
    scenario = generate(preset(args.type, args.seed, args.resolution))
    directory = os.path.dirname(args.out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    save_scenario(scenario, args.out)
    logger.info(f"wrote {args.type} scenario ({len(scenario.world.obstacles)} obstacles) to {args.out}")
    return EXIT_OK


def cmd_batch(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    scenario = resolve_scenario(config)
    seeds = parse_seeds(args.seeds)
    variants = [v.strip() for v in args.variants.split(',') if v.strip()]
    workers = args.workers if args.workers is not None else env_int('FAEP_WORKERS', 1)
    rows = BatchService(workers).run(scenario, config, seeds, variants, config.out_dir)
    return batch_exit_code(rows)


COMMANDS = {'run': cmd_run, 'gen': cmd_gen, 'batch': cmd_batch}


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e.field}: {e.message}", file=sys.stderr)
        return EXIT_CONFIG
    except GenerationFailed as e:
        print(f"error: scenario: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
