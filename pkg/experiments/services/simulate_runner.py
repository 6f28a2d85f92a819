from __future__ import annotations

import logging

import pandas as pd

from TreeWalks.services.potential_table import MartinKernel, PotentialError, solve_potential
from TreeWalks.services.statistics_utils import descriptive_statistics
from TreeWalks.services.tree_model import BoundaryRay, TreeAddressError, format_word
from TreeWalks.services.walk_simulator import (
    ConditionedPathTask,
    PathTask,
    RngPlan,
    run_streams,
)

from .config_loader import ExperimentConfig
from .reports import PLUMBING, SuiteReport


logger = logging.getLogger(__name__)

FAMILY_SIMULATE = 31

PATH_COLUMNS = ['path', 'step', 'vertex']
SUMMARY_COLUMNS = ['path', 'stream_id', 'start', 'end', 'steps', 'termination', 'truncated']


def build_task(config: ExperimentConfig, section: dict):
    tree = config.build_tree()
    plan = RngPlan(config.simulation.seed, FAMILY_SIMULATE)
    horizon = config.simulation.horizon if section['horizon'] is None else section['horizon']
    tree.validate(section['x0'])
    if section['mode'] == 'plain':
        return PathTask(tree, plan, section['x0'], horizon)

    theta = BoundaryRay(prefix=section['theta'])
    table = solve_potential(tree, section['table_depth'], config.solver.tol, window=config.solver.window)
    kernel = MartinKernel(table, theta)
    return ConditionedPathTask(
        kernel,
        plan,
        section['x0'],
        horizon,
        max_kernel_width=section['max_kernel_width'],
    )


def run_simulate(config: ExperimentConfig) -> SuiteReport:
    """Ad-hoc batch of plain or conditioned walks, exported as CSV."""
    section = config.section('simulate')
    report = SuiteReport('simulate', config.to_dict())
    n_paths = section['n_paths'] or config.simulation.n_paths
    try:
        task = build_task(config, section)
        paths = run_streams(task, n_paths, config.workers)
    except (PotentialError, TreeAddressError) as exc:
        report.add_error('simulate', PLUMBING, exc)
        return report

    summary = pd.DataFrame(
        [
            {
                'path': index,
                'stream_id': path.stream_id,
                'start': format_word(path.start),
                'end': format_word(path.end),
                'steps': path.steps,
                'termination': path.termination,
                'truncated': path.truncated,
            }
            for index, path in enumerate(paths)
        ],
        columns=SUMMARY_COLUMNS,
    )
    report.add_table('paths_summary', summary)
    if section['export_paths']:
        rows = [row for index, path in enumerate(paths) for row in path.to_rows(index)]
        report.add_table('paths', pd.DataFrame(rows, columns=PATH_COLUMNS))

    truncated = int(summary['truncated'].sum())
    if truncated:
        logger.warning('[simulate] %s de %s caminhos truncados na borda da bola certificada.', truncated, n_paths)
    report.metadata = {
        'mode': section['mode'],
        'x0': format_word(section['x0']),
        'n_paths': n_paths,
        'truncated_paths': truncated,
        'final_depth': descriptive_statistics([len(path.end) for path in paths]),
        'terminations': summary['termination'].value_counts().sort_index().to_dict(),
    }
    report.add('simulate_paths', PLUMBING, len(paths), n_paths, len(paths) == n_paths, truncated_paths=truncated)
    return report
