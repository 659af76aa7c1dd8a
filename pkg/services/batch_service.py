from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence
import logging
import os

from config import RunConfig
from errors import FaepError, Stuck, TimeCapExceeded
from planners.exploration_planner import ExplorationPlanner
from services.grid_world import Scenario, scenario_from_dict
from services.report_service import ReportService, run_row

logger = logging.getLogger(__name__)


@dataclass
class MissionOutcome:
    status: str
    report: Optional[Dict[str, Any]]
    error: str = ''


def run_mission(scenario: Scenario, config: RunConfig, out_dir: Optional[str] = None) -> MissionOutcome:
    """
    Run one mission and write its outputs.

    Stuck and time-cap missions still write their partial report and trace.
    """
    planner = ExplorationPlanner(scenario, config)
    try:
        outcome = MissionOutcome('complete', planner.run().to_dict())
    except Stuck as e:
        outcome = MissionOutcome('stuck', e.report, str(e))
    except TimeCapExceeded as e:
        outcome = MissionOutcome('time_cap', e.report, str(e))
    if out_dir is not None:
        records = planner.state.frontier_records if planner.config.dump_frontiers else None
        ReportService(out_dir).write_mission(outcome.report or {}, planner.state.trace, records)
    return outcome


def _run_job(scenario_data: Dict[str, Any], config_data: Dict[str, Any], variant: str, seed: int,
             out_dir: str) -> Dict[str, Any]:
    """Worker entry point; arguments are plain data so they pickle cleanly"""
    try:
        scenario = scenario_from_dict(scenario_data)
        config = replace(RunConfig.from_dict(config_data).with_variant(variant), seed=seed)
        outcome = run_mission(scenario, config, out_dir)
    except FaepError as e:
        logger.error(f"run {variant}/seed {seed} failed: {e}")
        return run_row(variant, seed, None, 'error', str(e))
    except Exception as e:
        # Anything else stays confined to this run's row
        logger.exception(f"run {variant}/seed {seed} crashed")
        return run_row(variant, seed, None, 'error', f"{type(e).__name__}: {e}")
    return run_row(variant, seed, outcome.report, outcome.status, outcome.error)


class BatchService:
    def __init__(self, workers: int = 1):
        """Runs the seed x variant cross product, one mission per worker process"""
        self.workers = max(1, workers)

    def run(self, scenario: Scenario, config: RunConfig, seeds: Sequence[int], variants: Sequence[str],
            out_dir: str) -> List[Dict[str, Any]]:
        """
        Run every (variant, seed) pair and write summary.csv.

        Each run writes its own report under <out_dir>/<variant>/seed_<seed>.

        Returns:
            Per-run rows sorted by (variant, seed)
        """
        # Reject unknown variants before any run starts
        for variant in variants:
            config.with_variant(variant)
        scenario_data = scenario.to_dict()
        config_data = config.to_dict()
        jobs = [(variant, seed, os.path.join(out_dir, variant, f"seed_{seed}"))
                for variant in variants for seed in seeds]
        logger.info(f"batch of {len(jobs)} runs on {scenario.name} with {self.workers} worker(s)")

        rows: List[Dict[str, Any]] = []
        if self.workers == 1:
            for variant, seed, run_dir in jobs:
                rows.append(_run_job(scenario_data, config_data, variant, seed, run_dir))
                logger.info(f"{variant}/seed {seed}: {rows[-1]['status']}")
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                futures = {pool.submit(_run_job, scenario_data, config_data, variant, seed, run_dir): (variant, seed)
                           for variant, seed, run_dir in jobs}
                for future in as_completed(futures):
                    variant, seed = futures[future]
                    rows.append(future.result())
                    logger.info(f"{variant}/seed {seed}: {rows[-1]['status']}")

        rows.sort(key=lambda r: (r['variant'], r['seed']))
        ReportService(out_dir).write_summary(rows)
        return rows


def batch_exit_code(rows: Sequence[Dict[str, Any]]) -> int:
    return 0 if any(r['status'] == 'complete' for r in rows) else 1
