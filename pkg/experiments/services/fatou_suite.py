from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Optional

import pandas as pd
from django.conf import settings

from TreeWalks.services.harmonic_service import (
    FLAG_NAMES,
    BallDirichletFunction,
    HarmonicFunction,
    MartinCombination,
    Thresholds,
    build_energy_report,
    classify,
    classify_path,
    flags_agree,
    merge_path_flags,
    stochastic_limit,
)
from TreeWalks.services.potential_table import MartinKernel, PotentialError, PotentialTable, solve_potential
from TreeWalks.services.tree_model import (
    ROOT,
    BoundaryRay,
    TreeAddressError,
    TreeModel,
    Word,
    format_word,
    parse_word,
)
from TreeWalks.services.walk_simulator import (
    DEFAULT_MAX_KERNEL_WIDTH,
    BoundaryTask,
    InBall,
    Outside,
    RngPlan,
    WalkHorizonError,
    WalkPath,
    run_streams,
    simulate_conditioned,
)

from .config_loader import ConfigError, ExperimentConfig, read_payload
from .reports import PLUMBING, SuiteReport


logger = logging.getLogger(__name__)

FAMILY_RAYS = 21
FAMILY_RAY_PATHS = 22
FAMILY_ENERGY_PATH = 23

THETA0_PLACEHOLDER = 'theta0'
SOURCE_FORCED = 'forced'
SUPPORTED_SUITE_VERSION = 1

# Flags that enter the co-occurrence table: radial and non-tangential.
COOCCURRENCE_FLAGS = FLAG_NAMES[:6]

ENERGY_COLUMNS = ['function', 'depth_or_step', 'radial_sum', 'nt_sum_c', 'sup_c', 'martingale_value']


def last_index_parity(y: Word) -> float:
    return 1.0 if y[-1] % 2 == 0 else -1.0


def first_sector(y: Word) -> float:
    return 1.0 if y[0] == 0 else 0.0


BOUNDARY_DATA = {
    'last-index-parity': last_index_parity,
    'first-sector': first_sector,
}


@dataclass(frozen=True)
class FatouFunction:
    name: str
    function: HarmonicFunction
    scale: Optional[int]
    gate: bool = False
    unbounded_on_theta0: bool = False


def load_function_suite(path=None) -> dict:
    if not path:
        path = getattr(settings, 'FATOU_FUNCTION_SUITE')
    payload = read_payload(Path(path))
    version = payload.get('version')
    if version != SUPPORTED_SUITE_VERSION:
        raise ConfigError(f'Versao {version!r} do conjunto de funcoes de teste nao suportada.')
    functions = payload.get('functions')
    if not isinstance(functions, list) or not functions:
        raise ConfigError('O conjunto de funcoes de teste deve listar ao menos uma funcao.')
    return payload


def _resolve_theta(text: str, theta0: BoundaryRay) -> BoundaryRay:
    if text == THETA0_PLACEHOLDER:
        return theta0
    try:
        return BoundaryRay(prefix=parse_word(text))
    except TreeAddressError as exc:
        raise ConfigError(f'Raio invalido no conjunto de funcoes: {text!r}.') from exc


def _effective_scale(function: HarmonicFunction, scale: int, width: int) -> Optional[int]:
    """Largest scale <= `scale` whose outer depth 2d stays inside the function's tube cap."""
    cap = function.tube_depth_cap(width)
    if cap is None or cap >= 2 * scale:
        return scale
    if cap < 2:
        return None
    return cap // 2


def build_test_function(
    entry: dict,
    tree: TreeModel,
    table: PotentialTable,
    theta0: BoundaryRay,
    scale: int,
    width: int,
) -> FatouFunction:
    name = entry.get('name')
    kind = entry.get('kind')
    if not name:
        raise ConfigError('Toda funcao de teste precisa de um nome.')
    try:
        if kind == 'constant':
            function = MartinCombination(constant=float(entry.get('value', 1.0)), name=name)
        elif kind == 'martin':
            terms = [
                (float(term['weight']), MartinKernel(table, _resolve_theta(term['theta'], theta0)))
                for term in entry.get('terms', [])
            ]
            function = MartinCombination(constant=float(entry.get('constant', 0.0)), terms=terms, name=name)
        elif kind == 'ball-dirichlet':
            boundary = BOUNDARY_DATA.get(entry.get('boundary'))
            if boundary is None:
                raise ConfigError(f'Dado de fronteira desconhecido em {name}: {entry.get("boundary")!r}.')
            function = BallDirichletFunction(tree, int(entry['radius']), boundary, name=name)
        else:
            raise ConfigError(f'Tipo de funcao de teste desconhecido em {name}: {kind!r}.')
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f'Funcao de teste {name} mal formada: {exc}') from exc

    effective = _effective_scale(function, scale, width)
    if effective != scale:
        logger.info('[fatou] %s: escala reduzida de %s para %s pelo limite de avaliacao.', name, scale, effective)
    return FatouFunction(
        name=name,
        function=function,
        scale=effective,
        gate=bool(entry.get('gate', False)),
        unbounded_on_theta0=bool(entry.get('unbounded_on_theta0', False)),
    )


def first_passage_prefix(path: WalkPath, depth: int) -> WalkPath:
    for step, vertex in enumerate(path.vertices):
        if len(vertex) >= depth:
            return WalkPath(path.start, path.vertices[: step + 1], path.stream_id, path.termination, path.truncated)
    return path


@dataclass(frozen=True)
class RayDiagnosticsTask:
    """All flags of every test function along one boundary ray; picklable for process pools.

    Conditioned paths stop at their first passage to `stop_depth`, the outer
    scale of the stochastic flags.
    """

    tree: TreeModel
    table: PotentialTable
    functions: tuple[FatouFunction, ...]
    rays: tuple[BoundaryRay, ...]
    width: int
    paths_per_ray: int
    horizon: int
    plan: RngPlan
    thresholds: Thresholds
    stop_depth: Optional[int] = None
    max_kernel_width: float = DEFAULT_MAX_KERNEL_WIDTH

    def conditioned_path(self, kernel: MartinKernel, stream: int, plan: Optional[RngPlan] = None) -> WalkPath:
        plan = plan or self.plan
        return simulate_conditioned(
            kernel,
            ROOT,
            self.horizon,
            plan.generator(stream),
            stream_id=stream,
            until=Outside(InBall(self.stop_depth - 1)) if self.stop_depth else None,
            max_kernel_width=self.max_kernel_width,
        )

    def conditioned_paths(self, index: int) -> list[WalkPath]:
        kernel = MartinKernel(self.table, self.rays[index])
        return [
            self.conditioned_path(kernel, index * self.paths_per_ray + offset) for offset in range(self.paths_per_ray)
        ]

    def diagnose(self, test: FatouFunction, ray: BoundaryRay, paths: list[WalkPath]) -> dict:
        flags = {name: None for name in FLAG_NAMES}
        limit = None
        if test.scale is not None:
            depth = 2 * test.scale
            try:
                report = build_energy_report(self.tree, test.function, ray, self.width, depth)
                flags.update(classify(report, test.scale, self.thresholds))
                stopped = [first_passage_prefix(path, depth) for path in paths]
                flags.update(
                    merge_path_flags(
                        [classify_path(self.tree, test.function, path, test.scale, self.thresholds) for path in stopped]
                    )
                )
                limit = stochastic_limit(test.function, stopped)
            except PotentialError as exc:
                logger.debug('[fatou] %s indeterminado em %s: %s', test.name, format_word(ray.prefix), exc)
        return {'flags': flags, 'agree': flags_agree(flags), 'stochastic_limit': limit}

    def energy_profile(self, ray: BoundaryRay, plan: RngPlan) -> pd.DataFrame:
        """Energy profile of every test function along `ray`, with one conditioned path when paths are simulated."""
        path = None
        if self.paths_per_ray and self.stop_depth:
            path = self.conditioned_path(MartinKernel(self.table, ray), 0, plan)
        frames = []
        for test in self.functions:
            if test.scale is None:
                continue
            depth = 2 * test.scale
            try:
                report = build_energy_report(
                    self.tree,
                    test.function,
                    ray,
                    self.width,
                    depth,
                    path=first_passage_prefix(path, depth) if path is not None else None,
                )
            except PotentialError as exc:
                logger.debug('[fatou] perfil de energia de %s indisponivel: %s', test.name, exc)
                continue
            frame = report.to_frame()
            frame.insert(0, 'function', test.name)
            frames.append(frame)
        if not frames:
            return pd.DataFrame(columns=ENERGY_COLUMNS)
        return pd.concat(frames, ignore_index=True)

    def __call__(self, index: int) -> dict:
        ray = self.rays[index]
        paths = self.conditioned_paths(index) if self.paths_per_ray else []
        truncated = sum(1 for path in paths if path.truncated)
        return {
            'ray': ray,
            'truncated_paths': truncated,
            'functions': {test.name: self.diagnose(test, ray, paths) for test in self.functions},
        }


def _flag_label(value: Optional[bool]) -> str:
    if value is None:
        return 'indeterminate'
    return 'true' if value else 'false'


def cooccurrence(frame: pd.DataFrame, flags=COOCCURRENCE_FLAGS) -> pd.DataFrame:
    """Counts of (value_a, value_b) for every pair of flags, in long form."""
    columns = ['function', 'flag_a', 'flag_b', 'value_a', 'value_b', 'count']
    if frame.empty:
        return pd.DataFrame(columns=columns)
    rows = []
    for function, group in frame.groupby('function', sort=True):
        labels = group[list(flags)].apply(lambda column: column.map(_flag_label))
        for first, second in combinations(flags, 2):
            table = pd.crosstab(labels[first], labels[second])
            for value_a in table.index:
                for value_b in table.columns:
                    rows.append(
                        {
                            'function': function,
                            'flag_a': first,
                            'flag_b': second,
                            'value_a': value_a,
                            'value_b': value_b,
                            'count': int(table.loc[value_a, value_b]),
                        }
                    )
    return pd.DataFrame(rows, columns=columns)


def conditioned_step_width(tree: TreeModel, kernel: MartinKernel, level: int) -> float:
    """Widest stochasticity interval of the conditioned law at gamma(level) and at its siblings."""
    theta = kernel.theta
    vertices = [theta.vertex(level)]
    if level >= 1:
        anchor = theta.vertex(level - 1)
        ray_index = theta.index_at(level - 1)
        vertices.extend(anchor + (branch,) for branch in range(tree.children_count(anchor)) if branch != ray_index)
    try:
        return max(kernel.conditioned_kernel(vertex).width for vertex in vertices)
    except PotentialError:
        return math.inf


def certify_stop_depth(
    tree: TreeModel,
    table: PotentialTable,
    theta0: BoundaryRay,
    stop_depth: int,
    max_width: float,
) -> float:
    """Rejects a table too shallow to certify conditioned steps up to the first passage to `stop_depth`."""
    width = conditioned_step_width(tree, MartinKernel(table, theta0), stop_depth - 1)
    if width > max_width:
        raise ConfigError(
            f'table_depth={table.depth} nao certifica o nucleo condicionado no nivel {stop_depth - 1} '
            f'(largura {width:.3e} > max_kernel_width={max_width:.1e}); aumente table_depth.'
        )
    logger.info('[fatou] nucleo condicionado certificado ate o nivel %s (largura %.3e).', stop_depth - 1, width)
    return width


def sample_rays(config: ExperimentConfig, tree: TreeModel, section: dict) -> list[BoundaryRay]:
    task = BoundaryTask(tree, RngPlan(config.simulation.seed, FAMILY_RAYS), ROOT, section['sample_depth'])
    return run_streams(task, section['n_rays'], config.workers)


def run_fatou(config: ExperimentConfig) -> SuiteReport:
    section = config.section('fatou')
    report = SuiteReport('fatou', config.to_dict())
    payload = load_function_suite(section['suite'])
    entries = payload['functions']
    if section['functions'] is not None:
        known = {entry.get('name') for entry in entries}
        missing = sorted(set(section['functions']) - known)
        if missing:
            raise ConfigError(f'Funcoes de teste desconhecidas: {", ".join(missing)}.')
        entries = [entry for entry in entries if entry.get('name') in section['functions']]
    if not entries:
        logger.info('Nenhuma funcao de teste selecionada para o experimento de Fatou.')
        return report

    tree = config.build_tree()
    theta0 = BoundaryRay(prefix=section['theta0'], source=SOURCE_FORCED)
    try:
        tree.validate_ray(theta0)
        table = solve_potential(tree, section['table_depth'], config.solver.tol, window=config.solver.window)
        functions = tuple(
            build_test_function(entry, tree, table, theta0, section['scale'], section['width']) for entry in entries
        )
        scales = [test.scale for test in functions if test.scale is not None]
        stop_depth = 2 * max(scales) if scales and section['paths_per_ray'] else None
        if stop_depth is not None:
            certify_stop_depth(tree, table, theta0, stop_depth, section['max_kernel_width'])
        rays = sample_rays(config, tree, section)
    except (PotentialError, TreeAddressError, WalkHorizonError) as exc:
        report.add_error('fatou_setup', PLUMBING, exc)
        return report

    sampled = len(rays)
    if section['force_include_theta0']:
        rays.append(theta0)
    report.metadata = {
        'suite_version': payload['version'],
        'theta0': theta0.to_dict(),
        'n_rays': sampled,
        'table_depth': table.depth,
        'stop_depth': stop_depth,
        'scales': {test.name: test.scale for test in functions},
        'functions': [test.function.describe() for test in functions],
    }

    task = RayDiagnosticsTask(
        tree=tree,
        table=table,
        functions=functions,
        rays=tuple(rays),
        width=section['width'],
        paths_per_ray=section['paths_per_ray'],
        horizon=section['horizon'],
        plan=RngPlan(config.simulation.seed, FAMILY_RAY_PATHS),
        thresholds=config.thresholds,
        stop_depth=stop_depth,
        max_kernel_width=section['max_kernel_width'],
    )
    logger.info('[fatou] diagnosticando %s raios com %s funcoes de teste.', len(rays), len(functions))
    results = run_streams(task, len(rays), config.workers)

    rows = []
    for index, result in enumerate(results):
        ray = result['ray']
        for test in functions:
            outcome = result['functions'][test.name]
            rows.append(
                {
                    'function': test.name,
                    'ray_index': index,
                    'ray_prefix': format_word(ray.prefix),
                    'source': ray.source,
                    **outcome['flags'],
                    'agree': outcome['agree'],
                    'stochastic_limit': outcome['stochastic_limit'],
                    'truncated_paths': result['truncated_paths'],
                }
            )
    columns = ['function', 'ray_index', 'ray_prefix', 'source', *FLAG_NAMES, 'agree', 'stochastic_limit', 'truncated_paths']
    frame = pd.DataFrame(rows, columns=columns)
    report.add_table('fatou_flags', frame)
    report.add_table('fatou_cooccurrence', cooccurrence(frame[frame['source'] != SOURCE_FORCED]))
    report.add_table('fatou_energy', task.energy_profile(theta0, RngPlan(config.simulation.seed, FAMILY_ENERGY_PATH)))

    record_path_certification(report, results, task)
    for test in functions:
        record_agreement(report, frame, test, section['agreement_gate'])
        if section['force_include_theta0'] and test.unbounded_on_theta0:
            record_theta0(report, frame, test)
    return report


def record_path_certification(report: SuiteReport, results: list[dict], task: RayDiagnosticsTask) -> None:
    """Fails when some ray has no conditioned path that reached the outer scale uncut."""
    truncated = [result['truncated_paths'] for result in results]
    if not task.paths_per_ray or task.stop_depth is None:
        passed = None
        blocked = []
    else:
        blocked = [index for index, count in enumerate(truncated) if count >= task.paths_per_ray]
        passed = not blocked
    report.add(
        'fatou_conditioned_paths',
        PLUMBING,
        sum(truncated),
        0,
        passed,
        fully_truncated_rays=blocked,
        paths=len(results) * task.paths_per_ray,
        stop_depth=task.stop_depth,
        max_kernel_width=task.max_kernel_width,
    )


def record_agreement(report: SuiteReport, frame: pd.DataFrame, test: FatouFunction, gate: float) -> None:
    rows = frame[(frame['function'] == test.name) & (frame['source'] != SOURCE_FORCED)]
    verdicts = [value for value in rows['agree'] if value is not None]
    indeterminate = len(rows) - len(verdicts)
    stochastic = int(rows['stochastic_bounded'].notna().sum())
    fraction = sum(1 for value in verdicts if value) / len(verdicts) if verdicts else None
    if fraction is None:
        passed = None
    elif test.gate:
        passed = fraction >= gate
    else:
        passed = None
    report.add(
        f'fatou_agreement_{test.name}',
        'nt convergence, nt boundedness and nt energy finiteness are a.e. equivalent',
        fraction,
        gate if test.gate else None,
        passed,
        margin=fraction - gate if fraction is not None and test.gate else None,
        determinate_rays=len(verdicts),
        indeterminate_rays=indeterminate,
        stochastic_determinate_rays=stochastic,
        gated=test.gate,
        scale=test.scale,
    )


def record_theta0(report: SuiteReport, frame: pd.DataFrame, test: FatouFunction) -> None:
    rows = frame[(frame['function'] == test.name) & (frame['source'] == SOURCE_FORCED)]
    if rows.empty:
        return
    row = rows.iloc[0]
    values = {name: row[name] for name in ('radial_bounded', 'nt_bounded', 'stochastic_bounded')}
    determinate = [value for value in values.values() if value is not None]
    passed = not any(bool(value) for value in determinate) if determinate else None
    report.add(
        f'fatou_theta0_unbounded_{test.name}',
        'K_theta0 is unbounded along theta0',
        values,
        False,
        passed,
        ray=row['ray_prefix'],
    )
