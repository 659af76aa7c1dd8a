from typing import Any, Dict, Iterable, List, Optional, Sequence
import json
import logging
import os

import pandas as pd

from planners.exploration_planner import TRACE_COLUMNS

logger = logging.getLogger(__name__)

RUN_COLUMNS = ['variant', 'seed', 'status', 'exploration_time', 'flight_distance', 'coverage_m3', 'replans']
METRICS = {'time': 'exploration_time', 'distance': 'flight_distance', 'coverage': 'coverage_m3'}
STATISTICS = ('avg', 'std', 'max', 'min')
SUMMARY_COLUMNS = ['row_type'] + RUN_COLUMNS + [f"{m}_{s}" for m in METRICS for s in STATISTICS] + ['error']


class ReportService:
    def __init__(self, out_dir: str):
        """Writes mission outputs (report, trace, frontier dump, batch summary) under one directory"""
        self.out_dir = out_dir

    def _path(self, name: str) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        return os.path.join(self.out_dir, name)

    def write_report(self, report: Dict[str, Any]) -> str:
        path = self._path('report.json')
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(report, handle, indent=2)
            handle.write('\n')
        return path

    def write_trace(self, rows: Sequence[Dict[str, Any]]) -> str:
        """trace.csv with a fixed column order; floats printed with six decimals"""
        path = self._path('trace.csv')
        frame = pd.DataFrame(list(rows), columns=list(TRACE_COLUMNS))
        frame['event'] = frame['event'].fillna('')
        frame.to_csv(path, index=False, float_format='%.6f', encoding='utf-8', lineterminator='\n')
        return path

    def write_frontiers(self, records: Iterable[Dict[str, Any]]) -> str:
        path = self._path('frontiers.jsonl')
        with open(path, 'w', encoding='utf-8') as handle:
            for record in records:
                handle.write(json.dumps(record) + '\n')
        return path

    def write_mission(self, report: Dict[str, Any], trace: Sequence[Dict[str, Any]],
                      frontier_records: Optional[Sequence[Dict[str, Any]]] = None) -> List[str]:
        """Write every output of one mission; returns the written paths"""
        written = [self.write_report(report), self.write_trace(trace)]
        if frontier_records is not None:
            written.append(self.write_frontiers(frontier_records))
        logger.info(f"wrote {', '.join(os.path.basename(p) for p in written)} to {self.out_dir}")
        return written

    def write_summary(self, rows: Sequence[Dict[str, Any]]) -> str:
        path = self._path('summary.csv')
        summary_frame(rows).to_csv(path, index=False, float_format='%.6f', encoding='utf-8', lineterminator='\n')
        logger.info(f"summary of {len(rows)} runs written to {path}")
        return path


def run_row(variant: str, seed: int, report: Optional[Dict[str, Any]], status: str,
            error: str = '') -> Dict[str, Any]:
    """One summary row from a (possibly partial) mission report"""
    report = report or {}
    return {
        'variant': variant,
        'seed': seed,
        'status': status,
        'exploration_time': report.get('exploration_time'),
        'flight_distance': report.get('flight_distance'),
        'coverage_m3': report.get('coverage_m3'),
        'replans': report.get('replans'),
        'error': error,
    }


def summary_frame(rows: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """
    Per-run rows sorted by (variant, seed), then one aggregate row per
    variant with avg/std/max/min over the completed runs. Std is the
    population standard deviation.
    """
    runs = pd.DataFrame(list(rows), columns=RUN_COLUMNS + ['error'])
    runs = runs.sort_values(['variant', 'seed'], kind='mergesort').reset_index(drop=True)
    runs.insert(0, 'row_type', 'run')

    aggregates = []
    for variant, group in runs.groupby('variant', sort=True):
        done = group[group['status'] == 'complete']
        row: Dict[str, Any] = {'row_type': 'aggregate', 'variant': variant,
                               'status': f"{len(done)}/{len(group)} complete"}
        for name, column in METRICS.items():
            values = pd.to_numeric(done[column])
            row[f"{name}_avg"] = values.mean()
            row[f"{name}_std"] = values.std(ddof=0)
            row[f"{name}_max"] = values.max()
            row[f"{name}_min"] = values.min()
        aggregates.append(row)

    frame = pd.concat([runs, pd.DataFrame(aggregates)], ignore_index=True) if aggregates else runs
    frame = frame.reindex(columns=SUMMARY_COLUMNS)
    frame['seed'] = frame['seed'].astype('Int64')
    frame['replans'] = frame['replans'].astype('Int64')
    frame['error'] = frame['error'].fillna('')
    return frame
