from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional

import pandas as pd
from django.conf import settings

from .tree_model import (
    ROOT,
    BoundaryRay,
    TreeModel,
    TreeSpec,
    Word,
    common_prefix_length,
    format_word,
)


logger = logging.getLogger(__name__)

# Absolute slack used when comparing two independently computed brackets.
AGREEMENT_SLACK = 1e-12


class PotentialError(Exception):
    pass


class PotentialRangeError(PotentialError):
    pass


class BracketInsufficientError(PotentialError):
    pass


class SolverConvergenceError(PotentialError):
    def __init__(self, message: str, worst_edge: Optional[tuple[Word, Word]] = None, worst_width: Optional[float] = None):
        super().__init__(message)
        self.worst_edge = worst_edge
        self.worst_width = worst_width


class ResourceLimitError(PotentialError):
    pass


class _BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class Bracket:
    """Closed interval [low, high] of nonnegative reals."""

    low: float
    high: float

    def __post_init__(self) -> None:
        if math.isnan(self.low) or math.isnan(self.high) or self.low > self.high:
            raise ValueError(f'Intervalo invalido: [{self.low}, {self.high}].')

    @classmethod
    def exact(cls, value: float) -> 'Bracket':
        return cls(float(value), float(value))

    @property
    def width(self) -> float:
        return self.high - self.low

    @property
    def mid(self) -> float:
        return 0.5 * (self.low + self.high)

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.low - slack <= value <= self.high + slack

    def overlaps(self, other: 'Bracket', slack: float = AGREEMENT_SLACK) -> bool:
        return self.low <= other.high + slack and other.low <= self.high + slack

    def certified_digits(self) -> int:
        """Number of decimal places on which every point of the bracket agrees."""
        if self.width == 0:
            return 17
        return max(0, int(math.floor(-math.log10(self.width))))

    def __mul__(self, other) -> 'Bracket':
        if isinstance(other, Bracket):
            return Bracket(self.low * other.low, self.high * other.high)
        factor = float(other)
        if factor < 0:
            raise ValueError('Somente fatores nao negativos preservam o intervalo.')
        return Bracket(self.low * factor, self.high * factor)

    __rmul__ = __mul__

    def __truediv__(self, other: 'Bracket') -> 'Bracket':
        if other.low <= 0:
            raise BracketInsufficientError('Divisao por intervalo que contem zero.')
        return Bracket(self.low / other.high, self.high / other.low)

    def to_list(self) -> list[float]:
        return [self.low, self.high]


ONE = Bracket(1.0, 1.0)


def _affine_ratio(numerator: float, low_sum: float, high_sum: float) -> Bracket:
    # p / (1 - s) is increasing in s, so the bracket endpoints map monotonically.
    if high_sum >= 1:
        raise BracketInsufficientError('Soma de retorno >= 1: aumente a profundidade da tabela.')
    return Bracket(numerator / (1.0 - low_sum), numerator / (1.0 - high_sum))


class PotentialTable:
    """Certified brackets for the directed-edge hitting probabilities F(x->y).

    Every neighbour edge inside the ball of radius `depth` is computed from
    the fixed-point relation

        F(x->y) = p(x,y) / (1 - sum_{z~x, z!=y} p(x,z) F(z->x))

    unrolled from the bracket [0, rho] placed on edges that leave the ball.
    The unrolling depth of an edge is its distance to the sphere (optionally
    capped by `window`); a shallower level is used as soon as its width is
    within `tol`. H, U and G are products and ratios of edge brackets.
    """

    def __init__(
        self,
        tree: TreeModel,
        depth: int,
        tol: float,
        *,
        window: Optional[int] = None,
        max_evaluations: Optional[int] = None,
    ) -> None:
        if depth < 1:
            raise ValueError('A profundidade D deve ser >= 1.')
        if not (tol > 0):
            raise ValueError('A tolerancia deve ser positiva.')
        if window is not None and window < 0:
            raise ValueError('A janela de truncamento deve ser >= 0.')
        self.tree = tree
        self.depth = int(depth)
        self.tol = float(tol)
        self.window = window
        self.rho = tree.spec.rho
        if max_evaluations is None:
            max_evaluations = getattr(settings, 'POTENTIAL_MAX_EVALUATIONS', 5_000_000)
        self.max_evaluations = int(max_evaluations)
        self._boundary = Bracket(0.0, self.rho)
        self._levels: dict = {}
        self._up: dict = {}
        self._down: dict = {}
        self._diagonal: dict = {}
        self._evaluations = 0
        self._lock = threading.Lock()

    def __getstate__(self) -> dict:
        state = dict(self.__dict__)
        state.pop('_lock', None)
        return state

    def __setstate__(self, state: dict) -> None:
        self.__dict__.update(state)
        self._lock = threading.Lock()

    # -- region hooks -----------------------------------------------------

    def member(self, x: Word) -> bool:
        return True

    def _up_key(self, x: Word):
        return self.tree.subtree_key(x)

    def _down_key(self, y: Word):
        if self.tree.spec.is_symmetric:
            return len(y)
        return y

    # -- bookkeeping ------------------------------------------------------

    @property
    def evaluations(self) -> int:
        return self._evaluations

    def _charge(self) -> None:
        self._evaluations += 1
        if self._evaluations > self.max_evaluations:
            raise _BudgetExhausted()

    def _store(self, memo: dict, key, value: Bracket) -> Bracket:
        with self._lock:
            return memo.setdefault(key, value)

    def _relative_depth(self, x: Word) -> int:
        level = self.depth - len(x)
        if self.window is not None:
            level = min(level, self.window)
        return level

    def check_in_ball(self, *vertices: Word) -> None:
        for x in vertices:
            self.tree.validate(x)
            if len(x) > self.depth:
                raise PotentialRangeError(
                    f'Vertice {format_word(x)} fora da bola certificada de raio {self.depth}.'
                )
            if not self.member(x):
                raise PotentialRangeError(f'Vertice {format_word(x)} fora da regiao da tabela.')

    # -- directed edges ---------------------------------------------------

    def _up_at(self, x: Word, level: int) -> Bracket:
        if level < 0:
            return self._boundary
        key = (self._up_key(x), level)
        cached = self._levels.get(key)
        if cached is not None:
            return cached
        self._charge()
        record = self.tree.record_unchecked(x)
        low_sum = high_sum = 0.0
        for child, probability in zip(record.neighbors[1:], record.probabilities[1:]):
            if not self.member(child):
                continue
            child_bracket = self._up_at(child, level - 1)
            low_sum += probability * child_bracket.low
            high_sum += probability * child_bracket.high
        result = _affine_ratio(record.probabilities[0], low_sum, high_sum)
        return self._store(self._levels, key, result)

    def up(self, x: Word) -> Bracket:
        """F(x -> parent(x))."""
        if not x:
            raise PotentialRangeError('A raiz nao tem aresta para o pai.')
        self.tree.validate(x)
        if len(x) > self.depth + 1:
            raise PotentialRangeError(f'Aresta {format_word(x)} -> pai fora da bola certificada.')
        return self._edge_up(x)

    def down(self, y: Word) -> Bracket:
        """F(parent(y) -> y)."""
        if not y:
            raise PotentialRangeError('A raiz nao tem aresta vinda do pai.')
        self.check_in_ball(y)
        return self._edge_down(y)

    def _edge_up(self, x: Word) -> Bracket:
        limit = self._relative_depth(x)
        key = (self._up_key(x), limit)
        cached = self._up.get(key)
        if cached is not None:
            return cached

        bracket = self._boundary
        try:
            for level in range(limit + 1):
                bracket = self._up_at(x, level)
                if bracket.width <= self.tol:
                    break
        except _BudgetExhausted:
            raise SolverConvergenceError(
                f'Orcamento de {self.max_evaluations} avaliacoes esgotado na aresta '
                f'{format_word(x)} -> {format_word(x[:-1])} (largura {bracket.width:.3e}).',
                worst_edge=(x, x[:-1]),
                worst_width=bracket.width,
            ) from None
        return self._store(self._up, key, bracket)

    def _edge_down(self, y: Word) -> Bracket:
        key = self._down_key(y)
        cached = self._down.get(key)
        if cached is not None:
            return cached

        x = y[:-1]
        record = self.tree.record_unchecked(x)
        numerator = 0.0
        low_sum = high_sum = 0.0
        for neighbor, probability in zip(record.neighbors, record.probabilities):
            if neighbor == y:
                numerator = probability
                continue
            if not self.member(neighbor):
                continue
            incoming = self._edge_down(x) if len(neighbor) < len(x) else self._edge_up(neighbor)
            low_sum += probability * incoming.low
            high_sum += probability * incoming.high
        result = _affine_ratio(numerator, low_sum, high_sum)
        return self._store(self._down, key, result)

    def edge(self, x: Word, y: Word) -> Bracket:
        if len(y) == len(x) - 1 and x[:-1] == y:
            return self.up(x)
        if len(y) == len(x) + 1 and y[:-1] == x:
            return self.down(y)
        raise PotentialRangeError(f'{format_word(x)} e {format_word(y)} nao sao vizinhos.')

    # -- derived quantities -----------------------------------------------

    def hitting(self, x: Word, y: Word) -> Bracket:
        """H(x, y): product of edge brackets along the geodesic."""
        self.check_in_ball(x, y)
        if x == y:
            return ONE
        meet = common_prefix_length(x, y)
        result = ONE
        for length in range(len(x), meet, -1):
            result = result * self._edge_up(x[:length])
        for length in range(meet + 1, len(y) + 1):
            result = result * self._edge_down(y[:length])
        return result

    def return_probability(self, y: Word) -> Bracket:
        self.check_in_ball(y)
        record = self.tree.record_unchecked(y)
        low_sum = high_sum = 0.0
        for neighbor, probability in zip(record.neighbors, record.probabilities):
            if not self.member(neighbor):
                continue
            incoming = self._edge_down(y) if len(neighbor) < len(y) else self._edge_up(neighbor)
            low_sum += probability * incoming.low
            high_sum += probability * incoming.high
        return Bracket(low_sum, high_sum)

    def green_diagonal(self, y: Word) -> Bracket:
        self.check_in_ball(y)
        key = self._down_key(y)
        cached = self._diagonal.get(key)
        if cached is not None:
            return cached
        returning = self.return_probability(y)
        if returning.high >= 1:
            raise BracketInsufficientError(
                f'U({format_word(y)}) tem limite superior >= 1: aumente a profundidade da tabela.'
            )
        result = Bracket(1.0 / (1.0 - returning.low), 1.0 / (1.0 - returning.high))
        return self._store(self._diagonal, key, result)

    def green(self, x: Word, y: Word) -> Bracket:
        return self.hitting(x, y) * self.green_diagonal(y)

    @property
    def green_upper_bound(self) -> float:
        return 1.0 / (1.0 - self.rho)

    # -- summaries and export ---------------------------------------------

    def root_edges(self) -> list[tuple[Word, Word, Bracket]]:
        edges = []
        for child in self.tree.children(ROOT):
            if not self.member(child):
                continue
            edges.append((ROOT, child, self.down(child)))
            edges.append((child, ROOT, self.up(child)))
        return edges

    def root_width(self) -> float:
        return max((bracket.width for _, _, bracket in self.root_edges()), default=0.0)

    def iter_edges(self, radius: Optional[int] = None) -> Iterable[tuple[Word, Word, Bracket]]:
        radius = self.depth if radius is None else min(radius, self.depth)
        limit = getattr(settings, 'GREEN_MAX_VERTICES', 400_000)
        count = 0
        for vertex in self.tree.iter_ball(radius):
            if not self.member(vertex):
                continue
            count += 1
            if count > limit:
                raise ResourceLimitError(f'Exportacao excede {limit} vertices.')
            for neighbor in self.tree.neighbors(vertex):
                if len(neighbor) > radius or not self.member(neighbor):
                    continue
                yield vertex, neighbor, self.edge(vertex, neighbor)

    def to_frame(self, radius: Optional[int] = None) -> pd.DataFrame:
        rows = [
            {
                'from_vertex': format_word(x),
                'to_vertex': format_word(y),
                'F_low': bracket.low,
                'F_high': bracket.high,
            }
            for x, y, bracket in self.iter_edges(radius)
        ]
        return pd.DataFrame(rows, columns=['from_vertex', 'to_vertex', 'F_low', 'F_high'])


class RestrictedPotentialTable(PotentialTable):
    """Brackets for the walk killed on leaving a prefix-closed region."""

    def __init__(self, tree: TreeModel, depth: int, tol: float, region: Callable[[Word], bool], **kwargs) -> None:
        super().__init__(tree, depth, tol, **kwargs)
        self.region = region
        if not region(ROOT):
            raise PotentialRangeError('A regiao restrita deve conter a raiz.')

    def member(self, x: Word) -> bool:
        return bool(self.region(x))

    def _up_key(self, x: Word):
        return x

    def _down_key(self, y: Word):
        return y


def solve_potential(
    tree: TreeModel,
    depth: int,
    tol: float,
    *,
    window: Optional[int] = None,
    max_evaluations: Optional[int] = None,
) -> PotentialTable:
    table = PotentialTable(tree, depth, tol, window=window, max_evaluations=max_evaluations)
    _prime(table)
    return table


def green_tube(
    tree: TreeModel,
    theta: BoundaryRay,
    c: int,
    depth: int,
    tol: float,
    *,
    window: Optional[int] = None,
    max_evaluations: Optional[int] = None,
) -> RestrictedPotentialTable:
    """Brackets for the walk killed on leaving the tube of width c around theta."""
    if c < 0:
        raise ValueError('A largura do tubo deve ser >= 0.')
    tree.validate_ray(theta)

    def in_tube(y: Word) -> bool:
        return len(y) - theta.projection_depth(y) <= c

    table = RestrictedPotentialTable(
        tree, depth, tol, in_tube, window=window, max_evaluations=max_evaluations
    )
    _prime(table)
    return table


def _prime(table: PotentialTable) -> None:
    table.green_diagonal(ROOT)
    width = table.root_width()
    logger.info(
        'Tabela de potencial D=%s resolvida: largura na raiz=%.3e tol=%.1e avaliacoes=%s',
        table.depth,
        width,
        table.tol,
        table.evaluations,
    )
    if width > table.tol:
        logger.warning(
            'Limite de truncamento atingido antes da tolerancia: largura %.3e > %.1e (D=%s).',
            width,
            table.tol,
            table.depth,
        )


@dataclass(frozen=True)
class ConditionedStep:
    vertex: Word
    neighbors: tuple[Word, ...]
    probabilities: tuple[float, ...]
    cumulative: tuple[float, ...]
    total: Bracket
    defect: float

    @property
    def width(self) -> float:
        return self.total.width

    def probability_to(self, y: Word) -> float:
        for neighbor, probability in zip(self.neighbors, self.probabilities):
            if neighbor == y:
                return probability
        return 0.0


@dataclass(frozen=True)
class LowerBoundCheck:
    vertex: Word
    tube_distance: int
    direct: Bracket
    identity: Bracket
    alpha: float

    @property
    def agree(self) -> bool:
        slack = AGREEMENT_SLACK * max(1.0, abs(self.direct.mid))
        return self.direct.overlaps(self.identity, slack=slack)

    @property
    def holds(self) -> bool:
        return min(self.direct.low, self.identity.low) >= self.alpha


def lower_bound_alpha(epsilon: float, c: int) -> float:
    """3 eps^2 * eps^(2c): G(y,y) >= 3 eps^2 and each tube step costs at most eps^2."""
    return 3.0 * epsilon**2 * epsilon ** (2 * c)


class MartinKernel:
    """K_theta(y) = H(y, pi(y)) / H(o, pi(y)) on the certified ball of a table."""

    def __init__(self, table: PotentialTable, theta: BoundaryRay) -> None:
        table.tree.validate_ray(theta)
        self.table = table
        self.tree = table.tree
        self.theta = theta
        self._symmetric = self.tree.spec.is_symmetric and not isinstance(table, RestrictedPotentialTable)
        self._values: dict = {}
        self._steps: dict = {}
        self._lock = threading.Lock()

    def __getstate__(self) -> dict:
        state = dict(self.__dict__)
        state.pop('_lock', None)
        return state

    def __setstate__(self, state: dict) -> None:
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def projection(self, y: Word) -> Word:
        return self.theta.vertex(self.theta.projection_depth(y))

    def _value_key(self, y: Word):
        # On symmetric trees K depends only on (projection level, tube distance).
        if not self._symmetric:
            return y
        level = self.theta.projection_depth(y)
        return level, len(y) - level

    def _step_key(self, x: Word):
        if not self._symmetric:
            return x
        level = self.theta.projection_depth(x)
        distance = len(x) - level
        return level, distance, self.theta.index_at(level) if distance == 0 else None

    def bracket(self, y: Word) -> Bracket:
        key = self._value_key(y)
        cached = self._values.get(key)
        if cached is not None:
            return cached
        self.table.check_in_ball(y)
        anchor = self.projection(y)
        result = self.table.hitting(y, anchor) / self.table.hitting(ROOT, anchor)
        with self._lock:
            return self._values.setdefault(key, result)

    def __call__(self, y: Word) -> float:
        return self.bracket(y).mid

    def conditioned_kernel(self, x: Word) -> ConditionedStep:
        """One-step law of the h-process at x; midpoints renormalized to sum 1."""
        if len(x) + 1 > self.table.depth:
            raise PotentialRangeError(
                f'Vizinhos de {format_word(x)} fora da bola certificada de raio {self.table.depth}.'
            )
        key = self._step_key(x)
        cached = self._steps.get(key)
        if cached is not None:
            if cached.vertex == x:
                return cached
            return replace(cached, vertex=x, neighbors=self.tree.record_unchecked(x).neighbors)
        record = self.tree.record(x)
        here = self.bracket(x)
        weights = []
        low_total = high_total = 0.0
        for neighbor, probability in zip(record.neighbors, record.probabilities):
            there = self.bracket(neighbor)
            weights.append(probability * there.mid / here.mid)
            low_total += probability * there.low / here.high
            high_total += probability * there.high / here.low
        total = sum(weights)
        probabilities = [weight / total for weight in weights]
        cumulative = []
        running = 0.0
        for probability in probabilities:
            running += probability
            cumulative.append(running)
        cumulative[-1] = 1.0
        step = ConditionedStep(
            vertex=x,
            neighbors=record.neighbors,
            probabilities=tuple(probabilities),
            cumulative=tuple(cumulative),
            total=Bracket(low_total, high_total),
            defect=abs(total - 1.0),
        )
        with self._lock:
            return self._steps.setdefault(key, step)

    def lower_bound_product(self, y: Word, c: Optional[int] = None) -> LowerBoundCheck:
        anchor = self.projection(y)
        distance = len(y) - len(anchor)
        direct = self.table.green(ROOT, y) * self.bracket(y)
        identity = self.table.hitting(y, anchor) * self.table.hitting(anchor, y) * self.table.green_diagonal(y)
        width = distance if c is None else c
        return LowerBoundCheck(
            vertex=y,
            tube_distance=distance,
            direct=direct,
            identity=identity,
            alpha=lower_bound_alpha(self.tree.spec.epsilon, width),
        )

    def ratio_limit_profile(self, y: Word, levels: Iterable[int]) -> list[tuple[int, Bracket]]:
        """G(y, gamma(n)) / G(o, gamma(n)) for each ray level n."""
        profile = []
        for level in levels:
            target = self.theta.vertex(level)
            profile.append((level, self.table.green(y, target) / self.table.green(ROOT, target)))
        return profile

    def to_frame(self, vertices: Iterable[Word]) -> pd.DataFrame:
        rows = []
        for vertex in vertices:
            bracket = self.bracket(vertex)
            rows.append({'vertex': format_word(vertex), 'K_low': bracket.low, 'K_high': bracket.high})
        return pd.DataFrame(rows, columns=['vertex', 'K_low', 'K_high'])


@dataclass(frozen=True)
class HomogeneousOracle:
    """Closed forms for the uniform walk on the homogeneous tree of degree d."""

    degree: int

    @property
    def edge_hitting(self) -> float:
        return 1.0 / (self.degree - 1)

    def hitting(self, distance: int) -> float:
        return float(self.degree - 1) ** (-distance)

    @property
    def return_probability(self) -> float:
        return 1.0 / (self.degree - 1)

    @property
    def green_diagonal(self) -> float:
        return (self.degree - 1) / (self.degree - 2)

    def green(self, distance: int) -> float:
        return self.hitting(distance) * self.green_diagonal

    def martin(self, projection_level: int, tube_distance: int) -> float:
        return float(self.degree - 1) ** (projection_level - tube_distance)

    def conditioned_root_law(self) -> tuple[float, float]:
        """(probability toward the ray child, probability toward each other child) at o."""
        d = self.degree
        return (d - 1) / d, 1.0 / (d * (d - 1))


def homogeneous_oracle(spec: TreeSpec) -> Optional[HomogeneousOracle]:
    if not spec.is_symmetric:
        return None
    return HomogeneousOracle(degree=spec.degree)
