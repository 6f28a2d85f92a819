from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from TreeWalks.services.green_solver import RestrictedGreenSolver, sector_masses, sphere_exit_distribution
from TreeWalks.services.potential_table import (
    MartinKernel,
    PotentialError,
    PotentialTable,
    green_tube,
    homogeneous_oracle,
    solve_potential,
)
from TreeWalks.services.statistics_utils import frequency_estimates, goodness_of_fit, proportion_estimate
from TreeWalks.services.tree_model import ROOT, BoundaryRay, TreeAddressError, TreeModel, Word, format_word
from TreeWalks.services.walk_simulator import (
    TERMINATION_ABSORBED,
    BoundaryTask,
    InSet,
    MappedTask,
    PathTask,
    RngPlan,
    WalkHorizonError,
    run_streams,
)

from .config_loader import ExperimentConfig
from .reports import PLUMBING, SuiteReport


logger = logging.getLogger(__name__)

# Stream families keep the suites' random draws disjoint for a shared seed.
FAMILY_TRIPLES = 1
FAMILY_SOUNDNESS = 2
FAMILY_SECTORS = 3

NESTING_SLACK = 1e-15


@dataclass
class IdentityContext:
    config: ExperimentConfig
    section: dict
    tree: TreeModel
    table: PotentialTable
    theta: BoundaryRay
    _deep: Optional[PotentialTable] = field(default=None, repr=False)

    @property
    def deep(self) -> PotentialTable:
        if self._deep is None:
            self._deep = solve_potential(
                self.tree,
                self.section['deep_depth'],
                self.config.solver.tol,
                window=self.config.solver.window,
            )
        return self._deep

    @property
    def oracle(self):
        return homogeneous_oracle(self.tree.spec)


def sample_vertex(tree: TreeModel, rng: np.random.Generator, depth: int) -> Word:
    level = int(rng.integers(0, depth + 1))
    word: Word = ROOT
    for _ in range(level):
        word = word + (int(rng.integers(0, tree.children_count(word))),)
    return word


def sample_triples(tree: TreeModel, rng: np.random.Generator, depth: int, count: int) -> list[tuple[Word, Word, Word]]:
    triples = []
    for _ in range(count):
        x = sample_vertex(tree, rng, depth)
        y = sample_vertex(tree, rng, depth)
        path = tree.geodesic(x, y)
        z = path[int(rng.integers(0, len(path)))]
        triples.append((x, z, y))
    return triples


def _endpoint_gap(first, second) -> float:
    return max(abs(first.low - second.low), abs(first.high - second.high))


def check_multiplicative_triples(context: IdentityContext, report: SuiteReport) -> None:
    section = context.section
    rng = RngPlan(context.config.simulation.seed, FAMILY_TRIPLES).generator(0)
    triples = sample_triples(context.tree, rng, context.table.depth, section['n_triples'])
    table = context.table
    worst_h = worst_g = 0.0
    rows = []
    for x, z, y in triples:
        gap_h = _endpoint_gap(table.hitting(x, y), table.hitting(x, z) * table.hitting(z, y))
        gap_g = _endpoint_gap(table.green(x, y), table.hitting(x, z) * table.green(z, y))
        worst_h = max(worst_h, gap_h)
        worst_g = max(worst_g, gap_g)
        rows.append(
            {
                'x': format_word(x),
                'z': format_word(z),
                'y': format_word(y),
                'H_residual': gap_h,
                'G_residual': gap_g,
            }
        )
    report.add_table('multiplicative_triples', pd.DataFrame(rows, columns=['x', 'z', 'y', 'H_residual', 'G_residual']))
    tol = section['triple_tol']
    report.add(
        'hitting_multiplicative',
        'H(x,y)=H(x,z)H(z,y)',
        worst_h,
        tol,
        worst_h <= tol,
        margin=tol - worst_h,
        n_triples=len(triples),
    )
    report.add(
        'green_multiplicative',
        'G(x,y)=H(x,z)G(z,y)',
        worst_g,
        tol,
        worst_g <= tol,
        margin=tol - worst_g,
        n_triples=len(triples),
    )


def check_analytic_oracle(context: IdentityContext, report: SuiteReport) -> None:
    oracle = context.oracle
    if oracle is None:
        report.add('hitting_analytic', 'H(x,y)=(d-1)^(-d(x,y))', None, None, None, reason='arvore nao homogenea uniforme')
        report.add('green_diagonal_analytic', 'G(y,y)=(d-1)/(d-2)', None, None, None, reason='arvore nao homogenea uniforme')
        return

    rng = RngPlan(context.config.simulation.seed, FAMILY_TRIPLES).generator(1)
    table = context.table
    misses = 0
    worst = 0.0
    count = max(1, context.section['n_triples'])
    for _ in range(count):
        x = sample_vertex(context.tree, rng, table.depth)
        y = sample_vertex(context.tree, rng, table.depth)
        expected = oracle.hitting(context.tree.distance(x, y))
        bracket = table.hitting(x, y)
        worst = max(worst, bracket.width)
        if not bracket.contains(expected, slack=1e-12):
            misses += 1
    report.add(
        'hitting_analytic',
        'H(x,y)=(d-1)^(-d(x,y))',
        misses,
        0,
        misses == 0,
        n_pairs=count,
        worst_width=worst,
    )

    tol = context.section['oracle_tol']
    diagonal = context.deep.green_diagonal(ROOT)
    edge = context.deep.down((0,))
    gap = max(abs(diagonal.mid - oracle.green_diagonal), abs(edge.mid - oracle.edge_hitting))
    report.add(
        'green_diagonal_analytic',
        'G(y,y)=(d-1)/(d-2)',
        diagonal.mid,
        oracle.green_diagonal,
        gap <= tol,
        margin=tol - gap,
        edge_hitting=edge.mid,
        edge_target=oracle.edge_hitting,
    )


def check_solver_certification(context: IdentityContext, report: SuiteReport) -> None:
    section = context.section
    shallow_depth, deep_depth = section['certification_depths']
    tol = context.config.solver.tol
    shallow = solve_potential(context.tree, shallow_depth, tol, window=context.config.solver.window)
    deeper = solve_potential(context.tree, deep_depth, tol, window=context.config.solver.window)

    distance = section['certification_distance']
    bound = context.tree.spec.rho ** section['certification_exponent']
    worst = 0.0
    for vertex in context.tree.iter_ball(max(0, shallow_depth - distance)):
        for neighbor in context.tree.neighbors(vertex):
            if len(neighbor) <= shallow_depth - distance:
                worst = max(worst, shallow.edge(vertex, neighbor).width)
    report.add(
        'certified_width',
        'edge brackets contract like rho^(D-|x|)',
        worst,
        bound,
        worst <= bound,
        margin=bound - worst,
        depth=shallow_depth,
        distance_to_sphere=distance,
    )

    nested = True
    digits = []
    rows = []
    for _, child, outer in shallow.root_edges():
        if child == ROOT:
            continue
        inner = deeper.down(child)
        nested = nested and inner.low >= outer.low - NESTING_SLACK and inner.high <= outer.high + NESTING_SLACK
        digits.append(outer.certified_digits())
        rows.append(
            {
                'edge': f'/->{format_word(child)}',
                'D': shallow_depth,
                'F_low': outer.low,
                'F_high': outer.high,
                'D_deeper': deep_depth,
                'F_low_deeper': inner.low,
                'F_high_deeper': inner.high,
            }
        )
    report.add_table('solver_certification', pd.DataFrame(rows))
    report.add(
        'certified_digits_stable',
        PLUMBING,
        min(digits) if digits else None,
        'brackets at D+4 nested in brackets at D',
        nested,
        depths=[shallow_depth, deep_depth],
    )


def check_green_diagonal(context: IdentityContext, report: SuiteReport) -> None:
    epsilon = context.tree.spec.epsilon
    bound = 3 * epsilon**2
    table = context.table
    vertices = list(context.tree.iter_ball(min(table.depth, 6)))
    lowest = min(table.green_diagonal(vertex).low for vertex in vertices)
    report.add(
        'green_diagonal_lower_bound',
        'G(y,y) >= p_2(y,y) >= 3 eps^2',
        lowest,
        bound,
        lowest >= bound,
        margin=lowest - bound,
        n_vertices=len(vertices),
    )


def check_green_upper_bound(context: IdentityContext, report: SuiteReport) -> None:
    table = context.table
    bound = table.green_upper_bound
    vertices = list(context.tree.iter_ball(min(table.depth, 4)))
    highest = max(table.green(ROOT, vertex).high for vertex in vertices)
    highest = max(highest, max(table.green_diagonal(vertex).high for vertex in vertices))
    report.add(
        'green_bounded',
        'G <= 1/(1-rho)',
        highest,
        bound,
        highest <= bound + 1e-12,
        margin=bound - highest,
    )


def check_h_transform(context: IdentityContext, report: SuiteReport) -> None:
    section = context.section
    kernel = MartinKernel(context.deep, context.theta)
    tol = section['kernel_tol']
    worst_defect = 0.0
    consistent = True
    drift = True
    for vertex in context.tree.iter_ball(section['check_depth']):
        step = kernel.conditioned_kernel(vertex)
        worst_defect = max(worst_defect, step.defect)
        consistent = consistent and step.total.contains(1.0, slack=1e-12)
    for level in range(section['check_depth']):
        here = context.theta.vertex(level)
        toward = context.theta.vertex(level + 1)
        drift = drift and kernel.conditioned_kernel(here).probability_to(toward) > context.tree.transition(here, toward)

    report.add(
        'h_transform_stochastic',
        'p^theta(x,y)=K(y)/K(x) p(x,y) sums to 1',
        worst_defect,
        tol,
        worst_defect <= tol and consistent,
        margin=tol - worst_defect,
        interval_contains_one=consistent,
    )
    report.add('h_transform_drift', 'p^theta toward theta exceeds p', drift, True, drift)

    oracle = context.oracle
    if oracle is None:
        report.add('h_transform_root_law', 'p^theta(o,.) closed form', None, None, None, reason='arvore nao homogenea uniforme')
        return
    toward_ray, elsewhere = oracle.conditioned_root_law()
    step = kernel.conditioned_kernel(ROOT)
    ray_child = context.theta.vertex(1)
    gaps = [
        abs(probability - (toward_ray if neighbor == ray_child else elsewhere))
        for neighbor, probability in zip(step.neighbors, step.probabilities)
    ]
    report.add(
        'h_transform_root_law',
        'p^theta(o,.) closed form',
        list(step.probabilities),
        [toward_ray if neighbor == ray_child else elsewhere for neighbor in step.neighbors],
        max(gaps) <= tol,
        margin=tol - max(gaps),
    )


def check_martin_root(context: IdentityContext, report: SuiteReport) -> None:
    kernel = MartinKernel(context.table, context.theta)
    value = kernel.bracket(ROOT)
    report.add('martin_root', 'K_theta(o)=1', value, 1.0, value.low == 1.0 and value.high == 1.0)


def check_restriction_monotonicity(context: IdentityContext, report: SuiteReport) -> None:
    tree = context.tree
    table = context.table
    radii = [radius for radius in (1, 2, 3, 4) if radius <= table.depth]
    solvers = [RestrictedGreenSolver(tree, tree.iter_ball(radius)) for radius in radii]
    rows = [solver.row(ROOT) for solver in solvers]
    monotone = True
    for vertex in tree.iter_ball(radii[0]):
        values = [row[solver.index[vertex]] for solver, row in zip(solvers, rows)]
        monotone = monotone and all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
        monotone = monotone and values[-1] <= table.green(ROOT, vertex).high + 1e-12

    single = RestrictedGreenSolver(tree, [ROOT]).green(ROOT, ROOT)

    tube = green_tube(tree, context.theta, 1, table.depth, context.config.solver.tol, window=context.config.solver.window)
    tube_below = all(
        tube.green(ROOT, vertex).low <= table.green(ROOT, vertex).high + 1e-12
        for vertex in tree.tube_enumerate(context.theta, 1, min(table.depth, 6))
    )
    report.add(
        'restriction_monotonicity',
        'G_U <= G_U\' <= G for U in U\'',
        monotone and tube_below,
        True,
        monotone and tube_below,
        radii=radii,
        tube_below_unrestricted=tube_below,
    )
    report.add('restricted_singleton', 'G_{x}(x,x)=1', single, 1.0, abs(single - 1.0) <= 1e-12)


def check_neumann_oracle(context: IdentityContext, report: SuiteReport) -> None:
    solver = RestrictedGreenSolver(context.tree, context.tree.iter_ball(1))
    direct = solver.green(ROOT, ROOT)
    unit = np.zeros(len(solver.vertices))
    unit[solver.index[ROOT]] = 1.0
    series = float(solver.neumann(unit, transpose=True)[solver.index[ROOT]])
    gap = abs(direct - series)
    report.add(
        'neumann_oracle',
        PLUMBING,
        direct,
        series,
        gap <= 1e-10,
        margin=1e-10 - gap,
    )


def check_sphere_exit_mass(context: IdentityContext, report: SuiteReport) -> None:
    depth = min(context.table.depth, 6)
    distribution = sphere_exit_distribution(context.tree, ROOT, depth)
    total = sum(distribution.values())
    gap = abs(total - 1.0)
    report.add('sphere_exit_mass', PLUMBING, total, 1.0, gap <= 1e-10, margin=1e-10 - gap, depth=depth)


def check_ratio_limit(context: IdentityContext, report: SuiteReport) -> None:
    kernel = MartinKernel(context.deep, context.theta)
    vertices = [(1,), (0, 1), context.theta.vertex(2) + (1,)]
    rows = []
    agree = True
    for vertex in vertices:
        if not context.tree.is_valid(vertex):
            continue
        closed_form = kernel.bracket(vertex)
        anchor_level = context.theta.projection_depth(vertex)
        levels = [level for level in context.section['ratio_levels'] if level >= anchor_level]
        for level, ratio in kernel.ratio_limit_profile(vertex, levels):
            overlap = ratio.overlaps(closed_form, slack=1e-12 * max(1.0, closed_form.mid))
            agree = agree and overlap
            rows.append(
                {
                    'vertex': format_word(vertex),
                    'level': level,
                    'ratio_low': ratio.low,
                    'ratio_high': ratio.high,
                    'K_low': closed_form.low,
                    'K_high': closed_form.high,
                }
            )
    report.add_table('ratio_limit', pd.DataFrame(rows))
    report.add(
        'martin_ratio_limit',
        'K_theta(y)=lim G(y,z)/G(o,z)',
        agree,
        True,
        agree,
        n_rows=len(rows),
    )


def reached_target(path) -> bool:
    return path.termination == TERMINATION_ABSORBED


def check_bracket_soundness(context: IdentityContext, report: SuiteReport) -> None:
    section = context.section
    table = context.table
    seed = context.config.simulation.seed
    sigmas = context.config.sigmas
    edges = [(ROOT, (0,)), ((0,), ROOT)]
    for offset, (source, target) in enumerate(edges):
        bracket = table.edge(source, target)
        task = MappedTask(
            PathTask(
                context.tree,
                RngPlan(seed, FAMILY_SOUNDNESS * 16 + offset),
                source,
                section['soundness_horizon'],
                until=InSet(frozenset([target])),
            ),
            reached_target,
        )
        hits = run_streams(task, section['soundness_paths'], context.config.workers)
        estimate = proportion_estimate(sum(hits), len(hits), seed)
        inside = estimate.within_bracket(bracket.low, bracket.high, sigmas)
        report.add(
            f'bracket_soundness_{format_word(source)}->{format_word(target)}',
            'F bracket contains hit frequency',
            estimate.to_dict(),
            bracket,
            inside,
            horizon=section['soundness_horizon'],
        )


def check_kernel_structure(context: IdentityContext, report: SuiteReport) -> None:
    radius = min(context.section['kernel_radius'], context.table.depth)
    rows = [context.tree.kernel_check(vertex) for vertex in context.tree.iter_ball(radius)]
    frame = pd.DataFrame(rows, columns=['vertex', 'degree', 'sum_defect', 'minimum', 'maximum', 'valid'])
    report.add_table('kernel_structure', frame)
    invalid = frame.loc[~frame['valid'], 'vertex'].tolist()
    spec = context.tree.spec
    report.add(
        'kernel_structure',
        'deg(x) >= 3, sum_y p(x,y) = 1, eps <= p(x,y) <= 1/2 - eta',
        len(invalid),
        0,
        not invalid,
        radius=radius,
        n_vertices=len(frame),
        worst_sum_defect=float(frame['sum_defect'].max()),
        minimum=float(frame['minimum'].min()),
        maximum=float(frame['maximum'].max()),
        epsilon=spec.epsilon,
        upper_bound=spec.upper_bound,
        invalid=invalid[:10],
    )


def check_boundary_sectors(context: IdentityContext, report: SuiteReport) -> None:
    section = context.section
    depth = section['sector_depth']
    exact = sector_masses(sphere_exit_distribution(context.tree, ROOT, depth))
    plan = RngPlan(context.config.simulation.seed, FAMILY_SECTORS)
    rays = run_streams(BoundaryTask(context.tree, plan, ROOT, depth), section['sector_paths'], context.config.workers)
    counts = Counter(ray.prefix[:1] for ray in rays)
    sectors = list(exact)
    estimates = frequency_estimates({sector: counts.get(sector, 0) for sector in sectors}, len(rays), plan.seed)
    fit = goodness_of_fit([counts.get(sector, 0) for sector in sectors], [exact[sector] for sector in sectors])

    sigmas = context.config.sigmas
    rows = [
        {
            'sector': format_word(sector),
            'exit_mass': exact[sector],
            'frequency': estimates[sector].estimate,
            'stderr': estimates[sector].stderr,
            'count': counts.get(sector, 0),
        }
        for sector in sectors
    ]
    report.add_table('boundary_sectors', pd.DataFrame(rows))
    margins = [estimates[sector].margin(exact[sector], sigmas) for sector in sectors]
    report.add(
        'boundary_sectors',
        'sample_boundary sector frequencies follow the sphere exit law',
        {format_word(sector): estimates[sector].estimate for sector in sectors},
        {format_word(sector): exact[sector] for sector in sectors},
        all(margin >= 0 for margin in margins),
        margin=min(margins),
        depth=depth,
        n_rays=len(rays),
        chi_square=fit,
    )


IDENTITY_RUNNERS = {
    'multiplicative_triples': check_multiplicative_triples,
    'analytic_oracle': check_analytic_oracle,
    'solver_certification': check_solver_certification,
    'green_diagonal': check_green_diagonal,
    'green_upper_bound': check_green_upper_bound,
    'h_transform': check_h_transform,
    'martin_root': check_martin_root,
    'restriction_monotonicity': check_restriction_monotonicity,
    'neumann_oracle': check_neumann_oracle,
    'sphere_exit_mass': check_sphere_exit_mass,
    'ratio_limit': check_ratio_limit,
    'bracket_soundness': check_bracket_soundness,
    'kernel_structure': check_kernel_structure,
    'boundary_sectors': check_boundary_sectors,
}


def export_tables(context: IdentityContext, report: SuiteReport) -> None:
    """Directed-edge brackets and Martin kernel brackets over the export ball."""
    radius = min(context.section['export_radius'], context.table.depth)
    try:
        report.add_table('potential_edges', context.table.to_frame(radius))
        kernel = MartinKernel(context.table, context.theta)
        report.add_table('martin_kernel', kernel.to_frame(context.tree.iter_ball(radius)))
    except (PotentialError, TreeAddressError) as exc:
        report.add_error('export_tables', PLUMBING, exc)


def run_identities(config: ExperimentConfig) -> SuiteReport:
    section = config.section('identities')
    report = SuiteReport('identities', config.to_dict())
    selection = [name for name in section['selection'] if name in IDENTITY_RUNNERS]
    if not selection:
        logger.info('Nenhuma verificacao de identidades selecionada.')
        return report

    tree = config.build_tree()
    theta = BoundaryRay(prefix=section['theta'])
    try:
        table = solve_potential(tree, config.solver.depth, config.solver.tol, window=config.solver.window)
    except PotentialError as exc:
        report.add_error('solve_potential', PLUMBING, exc)
        return report
    report.metadata = {
        'theta': theta.to_dict(),
        'table_depth': table.depth,
        'root_width': table.root_width(),
        'rho': table.rho,
    }
    context = IdentityContext(config=config, section=section, tree=tree, table=table, theta=theta)
    export_tables(context, report)

    for name in selection:
        logger.info('[identities] executando %s', name)
        try:
            IDENTITY_RUNNERS[name](context, report)
        except (PotentialError, TreeAddressError, WalkHorizonError) as exc:
            report.add_error(name, PLUMBING, exc)
    return report
