from __future__ import annotations

import logging
from dataclasses import dataclass
from statistics import median
from typing import Callable, Optional, Sequence

import pandas as pd

from .green_solver import solve_ball_dirichlet
from .potential_table import MartinKernel, PotentialRangeError
from .tree_model import BoundaryRay, TreeModel, Word, format_word
from .walk_simulator import WalkPath


logger = logging.getLogger(__name__)

# Absolute floor for energy tails; harmonic terms are only nonnegative up to rounding.
ENERGY_FLOOR = 1e-12

FLAG_NAMES = (
    'radial_converging',
    'radial_bounded',
    'radial_energy_finite',
    'nt_converging',
    'nt_bounded',
    'nt_energy_finite',
    'stochastic_converging',
    'stochastic_bounded',
    'stochastic_energy_finite',
)


@dataclass(frozen=True)
class Thresholds:
    convergence: float = 1e-3
    boundedness: float = 0.05
    energy: float = 1e-4

    def to_dict(self) -> dict:
        return {'convergence': self.convergence, 'boundedness': self.boundedness, 'energy': self.energy}


class HarmonicFunction:
    """Evaluable function on the tree with a certified evaluation depth."""

    name = 'function'
    is_harmonic = True

    @property
    def evaluation_depth(self) -> Optional[int]:
        """Largest |x| at which the value is defined (None: everywhere)."""
        return None

    def value(self, x: Word) -> float:
        raise NotImplementedError

    def __call__(self, x: Word) -> float:
        return self.value(x)

    def laplacian_depth(self) -> Optional[int]:
        depth = self.evaluation_depth
        return None if depth is None else depth - 1

    def tube_depth_cap(self, c: int) -> Optional[int]:
        return self.laplacian_depth()

    def _check(self, x: Word, depth: Optional[int]) -> None:
        if depth is not None and len(x) > depth:
            raise PotentialRangeError(f'{self.name} nao avaliavel em {format_word(x)} (profundidade maxima {depth}).')

    def describe(self) -> dict:
        return {'name': self.name, 'harmonic': self.is_harmonic}


class MartinCombination(HarmonicFunction):
    """u = constant + sum_i w_i K_{theta_i}."""

    def __init__(self, constant: float = 0.0, terms: Sequence[tuple[float, MartinKernel]] = (), name: str = 'martin') -> None:
        self.constant = float(constant)
        self.terms = tuple((float(weight), kernel) for weight, kernel in terms)
        self.name = name

    @property
    def evaluation_depth(self) -> Optional[int]:
        if not self.terms:
            return None
        return min(kernel.table.depth for _, kernel in self.terms)

    def value(self, x: Word) -> float:
        self._check(x, self.evaluation_depth)
        return self.constant + sum(weight * kernel(x) for weight, kernel in self.terms)

    def laplacian_tolerance(self, tree: TreeModel, x: Word) -> float:
        """Bound on |Laplacian u(x)| implied by the kernel bracket widths."""
        record = tree.record_unchecked(x)
        total = 0.0
        for weight, kernel in self.terms:
            spread = kernel.bracket(x).width
            spread += sum(p * kernel.bracket(y).width for y, p in zip(record.neighbors, record.probabilities))
            scale = max(kernel.bracket(y).high for y in (x, *record.neighbors))
            total += abs(weight) * (spread + 1e-12 * scale)
        return total + 1e-12 * abs(self.constant)

    def describe(self) -> dict:
        return {
            'name': self.name,
            'harmonic': True,
            'representation': 'martin-combination',
            'constant': self.constant,
            'terms': [
                {'weight': weight, 'theta': kernel.theta.to_dict(), 'table_depth': kernel.table.depth}
                for weight, kernel in self.terms
            ],
        }


class BallDirichletFunction(HarmonicFunction):
    """Harmonic extension of data on the sphere of `radius`; defined inside the closed ball."""

    def __init__(self, tree: TreeModel, radius: int, boundary: Callable[[Word], float], name: str = 'ball-dirichlet') -> None:
        self.tree = tree
        self.radius = int(radius)
        self.name = name
        self._values = solve_ball_dirichlet(tree, self.radius, boundary)

    @property
    def evaluation_depth(self) -> Optional[int]:
        return self.radius

    def tube_depth_cap(self, c: int) -> Optional[int]:
        return self.radius - c - 1

    def value(self, x: Word) -> float:
        self._check(x, self.radius)
        return self._values[x]

    def describe(self) -> dict:
        return {'name': self.name, 'harmonic': True, 'representation': 'ball-dirichlet', 'radius': self.radius}


class VertexFunction(HarmonicFunction):
    """Arbitrary function of the vertex, not assumed harmonic (test functions)."""

    is_harmonic = False

    def __init__(self, function: Callable[[Word], float], name: str = 'vertex-function') -> None:
        self.function = function
        self.name = name

    def value(self, x: Word) -> float:
        return float(self.function(x))


def distance_to_root(x: Word) -> float:
    return float(len(x))


def root_indicator(x: Word) -> float:
    return 1.0 if not x else 0.0


# -- pointwise operators -------------------------------------------------------


def evaluate(u: HarmonicFunction, x: Word) -> float:
    return u.value(x)


def laplacian(tree: TreeModel, u: HarmonicFunction, x: Word) -> float:
    u._check(x, u.laplacian_depth())
    record = tree.record_unchecked(x)
    return sum(p * u.value(y) for y, p in zip(record.neighbors, record.probabilities)) - u.value(x)


def energy_term(tree: TreeModel, u: HarmonicFunction, x: Word) -> float:
    """Laplacian of u^2 at x, as sum p (u(y) - u(x))^2 + 2 u(x) Laplacian u(x)."""
    u._check(x, u.laplacian_depth())
    record = tree.record_unchecked(x)
    here = u.value(x)
    spread = 0.0
    mean_value = 0.0
    for y, p in zip(record.neighbors, record.probabilities):
        there = u.value(y)
        spread += p * (there - here) ** 2
        mean_value += p * there
    return spread + 2.0 * here * (mean_value - here)


# -- energies ------------------------------------------------------------------


@dataclass(frozen=True)
class EnergySlice:
    kind: str
    terms: tuple[float, ...]
    partial_sums: tuple[float, ...]

    @property
    def total(self) -> float:
        return self.partial_sums[-1] if self.partial_sums else 0.0

    def at(self, index: int) -> float:
        return self.partial_sums[index]

    @property
    def monotone(self) -> bool:
        return all(later >= earlier - ENERGY_FLOOR for earlier, later in zip(self.partial_sums, self.partial_sums[1:]))


def _cumulative(terms: Sequence[float]) -> tuple[float, ...]:
    sums = []
    running = 0.0
    for term in terms:
        running += term
        sums.append(running)
    return tuple(sums)


def _tube_levels(tree: TreeModel, theta: BoundaryRay, c: int, depth: int) -> list[list[Word]]:
    levels: list[list[Word]] = [[] for _ in range(depth + 1)]
    for vertex in tree.tube_enumerate(theta, c, depth):
        levels[len(vertex)].append(vertex)
    return levels


def radial_energy(tree: TreeModel, u: HarmonicFunction, theta: BoundaryRay, depth: int) -> EnergySlice:
    """Partial sums over k <= depth of the energy terms at gamma_theta(k)."""
    terms = [energy_term(tree, u, theta.vertex(level)) for level in range(depth + 1)]
    return EnergySlice('radial', tuple(terms), _cumulative(terms))


def nt_energy(tree: TreeModel, u: HarmonicFunction, theta: BoundaryRay, c: int, depth: int) -> EnergySlice:
    """Partial sums by depth of the energy terms over the tube of width c."""
    terms = [
        sum(energy_term(tree, u, vertex) for vertex in level)
        for level in _tube_levels(tree, theta, c, depth)
    ]
    return EnergySlice(f'nt_c{c}', tuple(terms), _cumulative(terms))


def stochastic_energy(tree: TreeModel, u: HarmonicFunction, path: WalkPath) -> EnergySlice:
    """Entry n-1 of partial_sums is sum_{k < n} of the energy terms at X_k."""
    terms = [energy_term(tree, u, vertex) for vertex in path.vertices[:-1]]
    return EnergySlice('stochastic', tuple(terms), _cumulative(terms))


def martingale_track(tree: TreeModel, u: HarmonicFunction, path: WalkPath) -> list[float]:
    """M_n = u(X_n)^2 - sum_{k < n} energy term at X_k, for n = 0..steps."""
    track = [u.value(path.vertices[0]) ** 2]
    accumulated = 0.0
    for previous, current in zip(path.vertices, path.vertices[1:]):
        accumulated += energy_term(tree, u, previous)
        track.append(u.value(current) ** 2 - accumulated)
    return track


def nt_sup(tree: TreeModel, u: HarmonicFunction, theta: BoundaryRay, c: int, depth: int) -> float:
    cap = u.tube_depth_cap(c)
    if cap is not None and depth > cap:
        raise PotentialRangeError(f'{u.name}: diagnosticos no tubo limitados a profundidade {cap}.')
    return max(abs(u.value(vertex)) for vertex in tree.tube_enumerate(theta, c, depth))


# -- reports and classification -----------------------------------------------


@dataclass
class EnergyReport:
    theta: BoundaryRay
    c: int
    depth: int
    ray_values: tuple[float, ...]
    tube_low: tuple[float, ...]
    tube_high: tuple[float, ...]
    sup_profile: tuple[float, ...]
    radial: EnergySlice
    nontangential: EnergySlice
    stochastic: Optional[EnergySlice] = None
    martingale: Optional[tuple[float, ...]] = None

    @property
    def monotone(self) -> bool:
        slices = [self.radial, self.nontangential] + ([self.stochastic] if self.stochastic else [])
        sup_monotone = all(b >= a for a, b in zip(self.sup_profile, self.sup_profile[1:]))
        return sup_monotone and all(item.monotone for item in slices)

    def to_frame(self) -> pd.DataFrame:
        steps = len(self.martingale) if self.martingale is not None else 0
        rows = []
        for index in range(max(self.depth + 1, steps)):
            in_depth = index <= self.depth
            rows.append(
                {
                    'depth_or_step': index,
                    'radial_sum': self.radial.at(index) if in_depth else None,
                    'nt_sum_c': self.nontangential.at(index) if in_depth else None,
                    'sup_c': self.sup_profile[index] if in_depth else None,
                    'martingale_value': self.martingale[index] if index < steps else None,
                }
            )
        return pd.DataFrame(rows, columns=['depth_or_step', 'radial_sum', 'nt_sum_c', 'sup_c', 'martingale_value'])


def build_energy_report(
    tree: TreeModel,
    u: HarmonicFunction,
    theta: BoundaryRay,
    c: int,
    depth: int,
    path: Optional[WalkPath] = None,
) -> EnergyReport:
    cap = u.tube_depth_cap(c)
    if cap is not None and depth > cap:
        raise PotentialRangeError(f'{u.name}: diagnosticos no tubo limitados a profundidade {cap}.')

    levels = _tube_levels(tree, theta, c, depth)
    logger.debug(
        'Relatorio de energia de %s ao longo de %s: c=%s profundidade=%s (%s vertices no tubo).',
        u.name,
        format_word(theta.prefix),
        c,
        depth,
        sum(len(level) for level in levels),
    )
    tube_low, tube_high, sup_profile = [], [], []
    running_sup = 0.0
    for level in levels:
        values = [u.value(vertex) for vertex in level]
        tube_low.append(min(values))
        tube_high.append(max(values))
        running_sup = max(running_sup, max(abs(value) for value in values))
        sup_profile.append(running_sup)

    return EnergyReport(
        theta=theta,
        c=c,
        depth=depth,
        ray_values=tuple(u.value(theta.vertex(level)) for level in range(depth + 1)),
        tube_low=tuple(tube_low),
        tube_high=tuple(tube_high),
        sup_profile=tuple(sup_profile),
        radial=radial_energy(tree, u, theta, depth),
        nontangential=nt_energy(tree, u, theta, c, depth),
        stochastic=stochastic_energy(tree, u, path) if path is not None else None,
        martingale=tuple(martingale_track(tree, u, path)) if path is not None else None,
    )


def _converging(window_low: float, window_high: float, sup_value: float, thresholds: Thresholds) -> bool:
    return (window_high - window_low) <= thresholds.convergence * max(1.0, sup_value)


def _bounded(sup_inner: float, sup_outer: float, thresholds: Thresholds) -> bool:
    if sup_inner == 0:
        return sup_outer == 0
    return sup_outer / sup_inner <= 1.0 + thresholds.boundedness


def _energy_finite(inner: float, outer: float, thresholds: Thresholds) -> bool:
    return (outer - inner) <= thresholds.energy * abs(outer) + ENERGY_FLOOR


def classify(report: EnergyReport, scale: int, thresholds: Thresholds = Thresholds()) -> dict[str, Optional[bool]]:
    """Radial and non-tangential flags from the two scales d = scale and 2d.

    A flag is None (indeterminate) when the report does not reach depth 2d.
    """
    names = FLAG_NAMES[:6]
    if scale < 1 or report.depth < 2 * scale:
        return {name: None for name in names}
    inner, outer = scale, 2 * scale

    ray_window = report.ray_values[inner : outer + 1]
    ray_sup_inner = max(abs(value) for value in report.ray_values[: inner + 1])
    ray_sup_outer = max(abs(value) for value in report.ray_values[: outer + 1])

    tube_low = min(report.tube_low[inner : outer + 1])
    tube_high = max(report.tube_high[inner : outer + 1])

    return {
        'radial_converging': _converging(min(ray_window), max(ray_window), ray_sup_outer, thresholds),
        'radial_bounded': _bounded(ray_sup_inner, ray_sup_outer, thresholds),
        'radial_energy_finite': _energy_finite(report.radial.at(inner), report.radial.at(outer), thresholds),
        'nt_converging': _converging(tube_low, tube_high, report.sup_profile[outer], thresholds),
        'nt_bounded': _bounded(report.sup_profile[inner], report.sup_profile[outer], thresholds),
        'nt_energy_finite': _energy_finite(
            report.nontangential.at(inner), report.nontangential.at(outer), thresholds
        ),
    }


def classify_path(
    tree: TreeModel,
    u: HarmonicFunction,
    path: WalkPath,
    scale: int,
    thresholds: Thresholds = Thresholds(),
) -> dict[str, Optional[bool]]:
    """Stochastic flags between the first passages of the path to depths d and 2d."""
    names = FLAG_NAMES[6:]
    cap = u.laplacian_depth()
    if cap is not None and 2 * scale > cap:
        return {name: None for name in names}
    inner_step = outer_step = None
    for step, vertex in enumerate(path.vertices):
        if inner_step is None and len(vertex) >= scale:
            inner_step = step
        if len(vertex) >= 2 * scale:
            outer_step = step
            break
    if scale < 1 or inner_step is None or outer_step is None:
        return {name: None for name in names}

    values = [u.value(vertex) for vertex in path.vertices[: outer_step + 1]]
    window = values[inner_step:]
    sup_inner = max(abs(value) for value in values[: inner_step + 1])
    sup_outer = max(abs(value) for value in values)
    prefix = WalkPath(path.start, path.vertices[: outer_step + 1], path.stream_id, path.termination, path.truncated)
    energy = stochastic_energy(tree, u, prefix)
    inner_energy = energy.partial_sums[inner_step - 1] if inner_step > 0 else 0.0

    return {
        'stochastic_converging': _converging(min(window), max(window), sup_outer, thresholds),
        'stochastic_bounded': _bounded(sup_inner, sup_outer, thresholds),
        'stochastic_energy_finite': _energy_finite(inner_energy, energy.total, thresholds),
    }


def merge_path_flags(per_path: Sequence[dict[str, Optional[bool]]]) -> dict[str, Optional[bool]]:
    """A stochastic flag is determinate only when every determinate path agrees on it."""
    merged = {}
    for name in FLAG_NAMES[6:]:
        seen = {flags[name] for flags in per_path if flags.get(name) is not None}
        merged[name] = seen.pop() if len(seen) == 1 else None
    return merged


def flags_agree(flags: dict[str, Optional[bool]]) -> Optional[bool]:
    """True when all determinate flags coincide; None when none is determinate."""
    determinate = {value for value in flags.values() if value is not None}
    if not determinate:
        return None
    return len(determinate) == 1


def stochastic_limit(u: HarmonicFunction, paths: Sequence[WalkPath]) -> Optional[float]:
    """Median of u at the path endpoints."""
    if not paths:
        return None
    return float(median(u.value(path.end) for path in paths))
