from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import pandas as pd

from TreeWalks.services.green_solver import RestrictedGreenSolver
from TreeWalks.services.harmonic_service import HarmonicFunction, MartinCombination, martingale_track
from TreeWalks.services.potential_table import (
    MartinKernel,
    PotentialError,
    PotentialRangeError,
    PotentialTable,
    green_tube,
    solve_potential,
)
from TreeWalks.services.statistics_utils import mean_estimate, proportion_estimate
from TreeWalks.services.tree_model import ROOT, BoundaryRay, TreeAddressError, TreeModel, Word, format_word
from TreeWalks.services.walk_simulator import (
    ConditionedPathTask,
    InBall,
    InTube,
    MappedTask,
    Outside,
    PathTask,
    RngPlan,
    WalkHorizonError,
    WalkPath,
    exit_time,
    run_streams,
)

from .config_loader import ExperimentConfig
from .reports import PLUMBING, SuiteReport


logger = logging.getLogger(__name__)

FAMILY_CONDITIONED_HITTING = 11
FAMILY_OCCUPATION = 12
FAMILY_TUBE_SURVIVAL = 13
FAMILY_MARTINGALE = 14


# -- per-path summaries (picklable, so only they cross process boundaries) -----


@dataclass(frozen=True)
class HitSummary:
    targets: tuple[Word, ...]

    def __call__(self, path: WalkPath) -> tuple[bool, ...]:
        return tuple(path.hits(target) for target in self.targets)


@dataclass(frozen=True)
class VisitSummary:
    """Visits to each target before the exit time of `member`."""

    targets: tuple[Word, ...]
    member: Callable[[Word], bool]

    def __call__(self, path: WalkPath) -> tuple[int, ...]:
        until = exit_time(path, self.member)
        return tuple(path.visits(target, until) for target in self.targets)


@dataclass(frozen=True)
class ReachedOrLeft:
    """Stops a path at `target` or at its first vertex outside `member`."""

    target: Word
    member: Callable[[Word], bool]

    def __call__(self, y: Word) -> bool:
        return y == self.target or not self.member(y)


@dataclass(frozen=True)
class EndsAt:
    target: Word

    def __call__(self, path: WalkPath) -> bool:
        return path.end == self.target


@dataclass(frozen=True)
class StoppedMartingale:
    tree: TreeModel
    functions: tuple[HarmonicFunction, ...]

    def __call__(self, path: WalkPath) -> tuple[float, ...]:
        return tuple(martingale_track(self.tree, u, path)[-1] for u in self.functions)


@dataclass
class LemmaContext:
    config: ExperimentConfig
    section: dict
    tree: TreeModel
    table: PotentialTable
    theta: BoundaryRay
    kernel: MartinKernel

    @property
    def n_paths(self) -> int:
        return self.section['n_paths'] or self.config.simulation.n_paths

    @property
    def sigmas(self) -> float:
        return self.config.sigmas


def off_ray_vertex(tree: TreeModel, theta: BoundaryRay, level: int, distance: int) -> Word:
    """First vertex (by child index) at `distance` from the ray, projecting onto gamma_theta(level)."""
    anchor = theta.vertex(level)
    ray_index = theta.index_at(level)
    branch = next(index for index in range(tree.children_count(anchor)) if index != ray_index)
    return anchor + (branch,) + (0,) * (distance - 1)


def check_conditioned_hitting(context: LemmaContext, report: SuiteReport) -> None:
    section = context.section['conditioned_hitting']
    table = context.table
    targets = [
        off_ray_vertex(context.tree, context.theta, level, section['tube_distance']) for level in section['levels']
    ]
    ray_target = context.theta.vertex(section['ray_level'])
    plan = RngPlan(context.config.simulation.seed, FAMILY_CONDITIONED_HITTING)
    task = MappedTask(
        ConditionedPathTask(context.kernel, plan, ROOT, context.config.simulation.horizon),
        HitSummary(tuple(targets) + (ray_target,)),
    )
    summaries = run_streams(task, context.n_paths, context.config.workers)
    total = len(summaries)

    rows = []
    expected_count = 0.0
    for position, target in enumerate(targets):
        anchor = context.kernel.projection(target)
        exact = table.hitting(target, anchor) * table.hitting(anchor, target)
        expected_count += exact.mid
        estimate = proportion_estimate(sum(summary[position] for summary in summaries), total, plan.seed)
        report.add(
            f'conditioned_hitting_{format_word(target)}',
            'H^theta(o,x)=H(x,pi(x))H(pi(x),x)',
            estimate.to_dict(),
            exact,
            estimate.within_bracket(exact.low, exact.high, context.sigmas),
            margin=estimate.margin(exact.mid, context.sigmas),
        )
        rows.append(
            {
                'vertex': format_word(target),
                'projection': format_word(anchor),
                'exact_low': exact.low,
                'exact_high': exact.high,
                'frequency': estimate.estimate,
                'stderr': estimate.stderr,
            }
        )
    report.add_table('conditioned_hitting', pd.DataFrame(rows))

    count = mean_estimate((sum(summary[: len(targets)]) for summary in summaries), plan.seed)
    report.add(
        'conditioned_hit_count',
        'E^theta_o[#hits of x_n] = sum H(x_n,y_n)H(y_n,x_n)',
        count.to_dict(),
        expected_count,
        count.within(expected_count, context.sigmas),
        margin=count.margin(expected_count, context.sigmas),
    )

    ray_hits = proportion_estimate(sum(summary[-1] for summary in summaries), total, plan.seed)
    floor = section['ray_hit_floor']
    report.add(
        f'conditioned_ray_hit_{format_word(ray_target)}',
        'hits P_o^theta-a.s. y_n on the ray',
        ray_hits.to_dict(),
        floor,
        ray_hits.estimate >= floor,
        margin=ray_hits.estimate - floor,
    )


def check_occupation(context: LemmaContext, report: SuiteReport) -> None:
    section = context.section['occupation']
    radius = section['radius']
    targets = tuple(section['vertices'])
    for vertex in targets:
        context.tree.validate(vertex)
    solver = RestrictedGreenSolver(context.tree, context.tree.iter_ball(radius))
    row = solver.row(ROOT)

    member = InBall(radius)
    plan = RngPlan(context.config.simulation.seed, FAMILY_OCCUPATION)
    task = MappedTask(
        ConditionedPathTask(
            context.kernel,
            plan,
            ROOT,
            context.config.simulation.horizon,
            until=Outside(member),
        ),
        VisitSummary(targets, member),
    )
    summaries = run_streams(task, context.n_paths, context.config.workers)

    rows = []
    for position, vertex in enumerate(targets):
        exact = row[solver.index[vertex]] * context.kernel(vertex) if vertex in solver else 0.0
        estimate = mean_estimate((summary[position] for summary in summaries), plan.seed)
        report.add(
            f'occupation_{format_word(vertex)}',
            'E^theta_o[sum_{n<tau} phi(X_n)] = sum phi(y) G_Gamma(o,y)K_theta(y)',
            estimate.to_dict(),
            exact,
            estimate.within(exact, context.sigmas),
            margin=estimate.margin(exact, context.sigmas),
            radius=radius,
        )
        rows.append(
            {
                'vertex': format_word(vertex),
                'green_times_kernel': exact,
                'mean_visits': estimate.estimate,
                'stderr': estimate.stderr,
            }
        )
    report.add_table('occupation', pd.DataFrame(rows))


def check_tube_lower_bound(context: LemmaContext, report: SuiteReport) -> None:
    section = context.section['tube_lower_bound']
    depth = min(section['depth'], context.table.depth - 1)
    rows = []
    vertices: list[Word] = []
    for width in section['widths']:
        vertices = list(context.tree.tube_enumerate(context.theta, width, depth))
        checks = [context.kernel.lower_bound_product(vertex, width) for vertex in vertices]
        agree = all(check.agree for check in checks)
        holds = all(check.holds for check in checks)
        minimum = min(min(check.direct.low, check.identity.low) for check in checks)
        alpha = checks[0].alpha
        report.add(
            f'tube_lower_bound_c{width}',
            'G(o,y)K_theta(y) >= 3 eps^2 eps^(2c)',
            minimum,
            alpha,
            agree and holds,
            margin=minimum - alpha,
            identity_agrees=agree,
            n_vertices=len(checks),
            depth=depth,
        )
        rows.extend(
            {
                'c': width,
                'vertex': format_word(check.vertex),
                'tube_distance': check.tube_distance,
                'direct_low': check.direct.low,
                'direct_high': check.direct.high,
                'identity_low': check.identity.low,
                'identity_high': check.identity.high,
                'alpha': check.alpha,
            }
            for check in checks
        )
    report.add_table('tube_lower_bound', pd.DataFrame(rows))
    report.add_table('martin_kernel', context.kernel.to_frame(vertices))


def check_tube_survival(context: LemmaContext, report: SuiteReport) -> None:
    section = context.section['tube_survival']
    width = section['width']
    target = context.theta.vertex(section['level'])
    tube = green_tube(
        context.tree,
        context.theta,
        width,
        context.table.depth,
        context.config.solver.tol,
        window=context.config.solver.window,
    )
    # K_theta(gamma(n)) = 1 / F(o, gamma(n)), so the h-transform of F_U(o, gamma(n)) is this ratio.
    reach = tube.hitting(ROOT, target) / context.table.hitting(ROOT, target)
    green_ratio = tube.green(ROOT, target) / context.table.green(ROOT, target)
    diagonal_ratio = tube.green_diagonal(target) / context.table.green_diagonal(target)
    decomposed = reach * diagonal_ratio

    plan = RngPlan(context.config.simulation.seed, FAMILY_TUBE_SURVIVAL)
    task = MappedTask(
        ConditionedPathTask(
            context.kernel,
            plan,
            ROOT,
            context.config.simulation.horizon,
            until=ReachedOrLeft(target, InTube(context.theta, width)),
        ),
        EndsAt(target),
    )
    outcomes = run_streams(task, context.n_paths, context.config.workers)
    estimate = proportion_estimate(sum(outcomes), len(outcomes), plan.seed)

    epsilon = context.tree.spec.epsilon
    beta = max(1.0, context.table.green_upper_bound / (3 * epsilon**2))
    slack = section['slack']
    report.add(
        f'tube_survival_c{width}',
        'P_o^theta[hit gamma(n) before tau] = F_U(o,gamma(n)) / F(o,gamma(n))',
        estimate.to_dict(),
        reach,
        estimate.within(reach.mid, context.sigmas, slack=slack + reach.width),
        margin=estimate.margin(reach.mid, context.sigmas, slack=slack + reach.width),
        target_vertex=format_word(target),
        comparison_constant=beta,
    )
    report.add(
        f'tube_green_ratio_c{width}',
        'G_U(o,y)/G(o,y) = P_o^theta[hit y before tau] * G_U(y,y)/G(y,y)',
        green_ratio,
        decomposed,
        green_ratio.overlaps(decomposed) and green_ratio.low <= reach.high,
        target_vertex=format_word(target),
        comparison_constant=beta,
    )


def check_martingale_identity(context: LemmaContext, report: SuiteReport) -> None:
    section = context.section['martingale_identity']
    radius = section['radius']
    if radius + 1 >= context.table.depth:
        raise PotentialRangeError(f'Raio {radius} exige tabela com profundidade > {radius + 1}.')
    other = MartinKernel(context.table, BoundaryRay(prefix=section['mixture_theta']))
    weight = section['mixture_weight']
    functions = (
        MartinCombination(terms=[(1.0, context.kernel)], name='K_theta'),
        MartinCombination(terms=[(weight, context.kernel), (1.0 - weight, other)], name='mixture'),
    )

    plan = RngPlan(context.config.simulation.seed, FAMILY_MARTINGALE)
    task = MappedTask(
        PathTask(context.tree, plan, ROOT, section['horizon'], until=Outside(InBall(radius))),
        StoppedMartingale(context.tree, functions),
    )
    summaries = run_streams(task, context.n_paths, context.config.workers)
    for position, u in enumerate(functions):
        target = u(ROOT) ** 2
        estimate = mean_estimate((summary[position] for summary in summaries), plan.seed)
        report.add(
            f'martingale_identity_{u.name}',
            'E_o[M_{tau^n}] = u(o)^2',
            estimate.to_dict(),
            target,
            estimate.within(target, context.sigmas),
            margin=estimate.margin(target, context.sigmas),
            radius=radius,
            horizon=section['horizon'],
        )


LEMMA_RUNNERS = {
    'conditioned_hitting': check_conditioned_hitting,
    'occupation': check_occupation,
    'tube_lower_bound': check_tube_lower_bound,
    'tube_survival': check_tube_survival,
    'martingale_identity': check_martingale_identity,
}


def run_lemmas(config: ExperimentConfig) -> SuiteReport:
    section = config.section('lemmas')
    report = SuiteReport('lemmas', config.to_dict())
    selection = [name for name in section['selection'] if name in LEMMA_RUNNERS]
    if not selection:
        logger.info('Nenhuma verificacao de lemas selecionada.')
        return report

    tree = config.build_tree()
    theta = BoundaryRay(prefix=section['theta'])
    try:
        table = solve_potential(tree, section['table_depth'], config.solver.tol, window=config.solver.window)
        kernel = MartinKernel(table, theta)
    except (PotentialError, TreeAddressError) as exc:
        report.add_error('solve_potential', PLUMBING, exc)
        return report
    context = LemmaContext(config=config, section=section, tree=tree, table=table, theta=theta, kernel=kernel)
    report.metadata = {'theta': theta.to_dict(), 'table_depth': table.depth, 'n_paths': context.n_paths}

    for name in selection:
        logger.info('[lemmas] executando %s com %s caminhos', name, context.n_paths)
        try:
            LEMMA_RUNNERS[name](context, report)
        except (PotentialError, TreeAddressError, WalkHorizonError) as exc:
            report.add_error(name, PLUMBING, exc)
    return report
