from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Optional

import numpy as np
from scipy.optimize import brentq


logger = logging.getLogger(__name__)

Word = tuple[int, ...]
ROOT: Word = ()

KIND_HOMOGENEOUS = 'homogeneous'
KIND_SEEDED_RANDOM = 'seeded-random'
VALID_KINDS = (KIND_HOMOGENEOUS, KIND_SEEDED_RANDOM)

KERNEL_UNIFORM = 'uniform'
KERNEL_SEEDED_RANDOM = 'seeded-random'
VALID_KERNELS = (KERNEL_UNIFORM, KERNEL_SEEDED_RANDOM)

# Float slack for the Hyp bounds and for Σ p = 1.
PROBABILITY_SLACK = 1e-12

# Rays beyond their recorded depth always continue through this child.
RAY_EXTENSION_INDEX = 0

# Records deeper than this are rebuilt on demand instead of cached.
RECORD_CACHE_DEPTH = 16

# Mixed into per-vertex seeds so tree draws never share a stream with walks.
_VERTEX_STREAM_TAG = 0x54524545
_RAW_WEIGHT_RANGE = (0.5, 1.5)


class TreeSpecError(ValueError):
    pass


class TreeAddressError(ValueError):
    pass


def parse_probability(value) -> float:
    """Accepts floats, ints and exact fraction strings such as "1/3"."""
    if isinstance(value, bool):
        raise TreeSpecError('Probabilidade invalida: booleano.')
    if isinstance(value, (int, float)):
        return float(value)
    candidate = str(value or '').strip()
    if not candidate:
        raise TreeSpecError('Probabilidade ausente.')
    try:
        return float(Fraction(candidate))
    except (ValueError, ZeroDivisionError) as exc:
        raise TreeSpecError(f'Probabilidade invalida: {value!r}.') from exc


def format_word(word: Word) -> str:
    if not word:
        return '/'
    return '/' + '/'.join(str(index) for index in word)


def parse_word(text) -> Word:
    candidate = str(text if text is not None else '').strip()
    if candidate in ('', '/'):
        return ROOT
    parts = candidate.strip('/').split('/')
    try:
        word = tuple(int(part) for part in parts)
    except ValueError as exc:
        raise TreeAddressError(f'Endereco de vertice invalido: {text!r}.') from exc
    if any(index < 0 for index in word):
        raise TreeAddressError(f'Endereco de vertice com indice negativo: {text!r}.')
    return word


def common_prefix_length(x: Word, y: Word) -> int:
    limit = min(len(x), len(y))
    length = 0
    while length < limit and x[length] == y[length]:
        length += 1
    return length


def _clamped_projection(weights: np.ndarray, lower: float, upper: float) -> np.ndarray:
    """Euclidean projection of a probability vector onto {lower <= p_i <= upper, sum p = 1}."""
    if np.all(weights >= lower) and np.all(weights <= upper):
        return weights

    def excess(shift: float) -> float:
        return float(np.clip(weights - shift, lower, upper).sum()) - 1.0

    shift = brentq(
        excess,
        float(weights.min()) - upper,
        float(weights.max()) - lower,
        xtol=1e-16,
        rtol=4 * np.finfo(float).eps,
    )
    projected = np.clip(weights - shift, lower, upper)
    # The root leaves a rounding residual; only coordinates strictly inside the bounds absorb it.
    free = (projected > lower) & (projected < upper)
    if free.any():
        projected[free] += (1.0 - projected.sum()) / free.sum()
    return np.clip(projected, lower, upper)


@dataclass(frozen=True)
class TreeSpec:
    kind: str = KIND_HOMOGENEOUS
    degree: int = 3
    d_min: int = 3
    d_max: int = 3
    kernel: str = KERNEL_UNIFORM
    epsilon: float = 1 / 3
    eta: float = 1 / 6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in VALID_KINDS:
            raise TreeSpecError(f'Tipo de arvore desconhecido: {self.kind!r}.')
        if self.kernel not in VALID_KERNELS:
            raise TreeSpecError(f'Regra de nucleo desconhecida: {self.kernel!r}.')
        if not (self.epsilon > 0):
            raise TreeSpecError('epsilon deve ser positivo.')
        if not (0 < self.eta < 0.5):
            raise TreeSpecError('eta deve estar em (0, 1/2).')
        if self.epsilon > self.upper_bound + PROBABILITY_SLACK:
            raise TreeSpecError('epsilon excede 1/2 - eta: nenhum nucleo satisfaz Hyp.')
        if not (0 <= self.seed < 2**64):
            raise TreeSpecError('seed deve ser um inteiro de 64 bits sem sinal.')

        lowest, highest = self.degree_bounds
        if lowest < 3:
            raise TreeSpecError('Hyp exige grau >= 3 em todo vertice.')
        if lowest > highest:
            raise TreeSpecError('d_min deve ser <= d_max.')
        for degree in range(lowest, highest + 1):
            if degree * self.epsilon > 1 + PROBABILITY_SLACK:
                raise TreeSpecError(f'Grau {degree} incompativel com epsilon={self.epsilon}: d*epsilon > 1.')
            if degree * self.upper_bound < 1 - PROBABILITY_SLACK:
                raise TreeSpecError(f'Grau {degree} incompativel com eta={self.eta}: d*(1/2 - eta) < 1.')

    @property
    def degree_bounds(self) -> tuple[int, int]:
        if self.kind == KIND_HOMOGENEOUS:
            return self.degree, self.degree
        return self.d_min, self.d_max

    @property
    def upper_bound(self) -> float:
        return 0.5 - self.eta

    @property
    def rho(self) -> float:
        """Gambler's-ruin bound on every directed-edge hitting probability."""
        return (0.5 - self.eta) / (0.5 + self.eta)

    @property
    def is_symmetric(self) -> bool:
        return self.kind == KIND_HOMOGENEOUS and self.kernel == KERNEL_UNIFORM

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'degree': self.degree,
            'd_min': self.d_min,
            'd_max': self.d_max,
            'kernel': self.kernel,
            'epsilon': self.epsilon,
            'eta': self.eta,
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> 'TreeSpec':
        payload = dict(payload or {})
        unknown = set(payload) - {'kind', 'degree', 'd_min', 'd_max', 'kernel', 'epsilon', 'eta', 'seed'}
        if unknown:
            raise TreeSpecError(f'Campos desconhecidos no TreeSpec: {sorted(unknown)}.')
        defaults = cls()
        try:
            return cls(
                kind=str(payload.get('kind', defaults.kind)),
                degree=int(payload.get('degree', defaults.degree)),
                d_min=int(payload.get('d_min', payload.get('degree', defaults.d_min))),
                d_max=int(payload.get('d_max', payload.get('degree', defaults.d_max))),
                kernel=str(payload.get('kernel', defaults.kernel)),
                epsilon=parse_probability(payload.get('epsilon', defaults.epsilon)),
                eta=parse_probability(payload.get('eta', defaults.eta)),
                seed=int(payload.get('seed', defaults.seed)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, TreeSpecError):
                raise
            raise TreeSpecError(f'TreeSpec invalido: {exc}') from exc


@dataclass(frozen=True)
class VertexRecord:
    word: Word
    degree: int
    neighbors: tuple[Word, ...]
    probabilities: tuple[float, ...]
    cumulative: tuple[float, ...]

    def probability_to(self, y: Word) -> float:
        for neighbor, probability in zip(self.neighbors, self.probabilities):
            if neighbor == y:
                return probability
        return 0.0


@dataclass(frozen=True)
class BoundaryRay:
    """A boundary point given by the geodesic ray from o.

    The recorded prefix is followed by child index 0 at every deeper level.
    """

    prefix: Word = ROOT
    source: str = 'fixed'

    def index_at(self, level: int) -> int:
        if level < len(self.prefix):
            return self.prefix[level]
        return RAY_EXTENSION_INDEX

    def vertex(self, level: int) -> Word:
        if level < 0:
            raise TreeAddressError('Nivel do raio deve ser >= 0.')
        if level <= len(self.prefix):
            return self.prefix[:level]
        return self.prefix + (RAY_EXTENSION_INDEX,) * (level - len(self.prefix))

    def vertices(self, depth: int) -> list[Word]:
        return [self.vertex(level) for level in range(depth + 1)]

    def projection_depth(self, y: Word) -> int:
        level = 0
        while level < len(y) and y[level] == self.index_at(level):
            level += 1
        return level

    def to_dict(self) -> dict:
        return {
            'prefix': format_word(self.prefix),
            'recorded_depth': len(self.prefix),
            'extension_rule': f'child-{RAY_EXTENSION_INDEX}',
            'source': self.source,
        }

    @classmethod
    def from_text(cls, text, source: str = 'fixed') -> 'BoundaryRay':
        return cls(prefix=parse_word(text), source=source)


class TreeModel:
    """Lazily generated rooted tree with a nearest-neighbour kernel satisfying Hyp.

    Every answer is a pure function of (spec, word); the record cache is
    filled idempotently and may be shared between threads.
    """

    def __init__(self, spec: TreeSpec) -> None:
        self.spec = spec
        self._records: dict[Word, VertexRecord] = {}
        self._lock = threading.Lock()

    def __getstate__(self) -> dict:
        return {'spec': self.spec}

    def __setstate__(self, state: dict) -> None:
        self.__init__(state['spec'])

    def __repr__(self) -> str:
        return f'TreeModel({self.spec!r})'

    # -- generation -------------------------------------------------------

    def _vertex_rng(self, word: Word) -> np.random.Generator:
        entropy = [_VERTEX_STREAM_TAG, self.spec.seed, len(word), *word]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def _draw(self, word: Word) -> tuple[int, Optional[np.random.Generator]]:
        if self.spec.kind == KIND_HOMOGENEOUS:
            degree = self.spec.degree
            rng = self._vertex_rng(word) if self.spec.kernel == KERNEL_SEEDED_RANDOM else None
            return degree, rng
        rng = self._vertex_rng(word)
        degree = int(rng.integers(self.spec.d_min, self.spec.d_max + 1))
        return degree, rng

    def _build_record(self, word: Word) -> VertexRecord:
        degree, rng = self._draw(word)
        neighbors: list[Word] = []
        if word:
            neighbors.append(word[:-1])
        children = degree if not word else degree - 1
        neighbors.extend(word + (index,) for index in range(children))

        if self.spec.kernel == KERNEL_UNIFORM:
            probabilities = np.full(degree, 1.0 / degree)
        else:
            raw = rng.uniform(*_RAW_WEIGHT_RANGE, size=degree)
            probabilities = _clamped_projection(raw / raw.sum(), self.spec.epsilon, self.spec.upper_bound)

        cumulative = np.cumsum(probabilities)
        cumulative[-1] = 1.0
        return VertexRecord(
            word=word,
            degree=degree,
            neighbors=tuple(neighbors),
            probabilities=tuple(float(value) for value in probabilities),
            cumulative=tuple(float(value) for value in cumulative),
        )

    def record(self, x: Word) -> VertexRecord:
        cached = self._records.get(x)
        if cached is not None:
            return cached
        self.validate(x)
        return self.record_unchecked(x)

    def record_unchecked(self, x: Word) -> VertexRecord:
        """Record of a word already known to be valid (e.g. produced by a walk step)."""
        cached = self._records.get(x)
        if cached is not None:
            return cached
        built = self._build_record(x)
        if len(x) > RECORD_CACHE_DEPTH:
            return built
        with self._lock:
            return self._records.setdefault(x, built)

    # -- addressing -------------------------------------------------------

    def validate(self, x: Word) -> None:
        if not isinstance(x, tuple):
            raise TreeAddressError(f'Vertice deve ser uma tupla de indices, recebido {x!r}.')
        if x in self._records:
            return
        for level, index in enumerate(x):
            parent = self.record_unchecked(x[:level])
            limit = parent.degree if level == 0 else parent.degree - 1
            if not isinstance(index, (int, np.integer)) or index < 0 or index >= limit:
                raise TreeAddressError(
                    f'Indice {index!r} invalido no nivel {level} de {format_word(x)}: '
                    f'o vertice pai tem {limit} filhos.'
                )

    def is_valid(self, x: Word) -> bool:
        try:
            self.validate(x)
        except TreeAddressError:
            return False
        return True

    def degree(self, x: Word) -> int:
        return self.record(x).degree

    def children_count(self, x: Word) -> int:
        degree = self.record(x).degree
        return degree if not x else degree - 1

    def neighbors(self, x: Word) -> tuple[Word, ...]:
        return self.record(x).neighbors

    def children(self, x: Word) -> tuple[Word, ...]:
        neighbors = self.record(x).neighbors
        return neighbors if not x else neighbors[1:]

    def parent(self, x: Word) -> Word:
        if not x:
            raise TreeAddressError('A raiz nao tem pai.')
        return x[:-1]

    def transition(self, x: Word, y: Word) -> float:
        return self.record(x).probability_to(y)

    def distance(self, x: Word, y: Word) -> int:
        self.validate(x)
        self.validate(y)
        return len(x) + len(y) - 2 * common_prefix_length(x, y)

    def geodesic(self, x: Word, y: Word) -> list[Word]:
        self.validate(x)
        self.validate(y)
        meet = common_prefix_length(x, y)
        upward = [x[:length] for length in range(len(x), meet - 1, -1)]
        downward = [y[:length] for length in range(meet + 1, len(y) + 1)]
        return upward + downward

    def iter_ball(self, radius: int, sphere_only: bool = False) -> Iterator[Word]:
        """Vertices within distance `radius` of o in breadth-first order."""
        level = [ROOT]
        for depth in range(radius + 1):
            if not sphere_only or depth == radius:
                yield from level
            if depth == radius:
                break
            level = [child for vertex in level for child in self.children(vertex)]

    def ball(self, radius: int) -> list[Word]:
        return list(self.iter_ball(radius))

    def sphere(self, radius: int) -> list[Word]:
        return list(self.iter_ball(radius, sphere_only=True))

    def subtree_key(self, x: Word):
        """Identifies the isomorphism class (with kernel) of the subtree below x."""
        if self.spec.is_symmetric and x:
            return KIND_HOMOGENEOUS
        return x

    def kernel_check(self, x: Word) -> dict:
        record = self.record(x)
        total = sum(record.probabilities)
        minimum = min(record.probabilities)
        maximum = max(record.probabilities)
        return {
            'vertex': format_word(x),
            'degree': record.degree,
            'sum_defect': abs(total - 1.0),
            'minimum': minimum,
            'maximum': maximum,
            'valid': (
                record.degree >= 3
                and abs(total - 1.0) <= PROBABILITY_SLACK
                and minimum >= self.spec.epsilon - PROBABILITY_SLACK
                and maximum <= self.spec.upper_bound + PROBABILITY_SLACK
            ),
        }

    # -- boundary rays and tubes ------------------------------------------

    def validate_ray(self, theta: BoundaryRay) -> None:
        self.validate(theta.prefix)

    def project(self, theta: BoundaryRay, y: Word) -> Word:
        self.validate(y)
        return theta.vertex(theta.projection_depth(y))

    def tube_distance(self, theta: BoundaryRay, y: Word) -> int:
        self.validate(y)
        return len(y) - theta.projection_depth(y)

    def tube_contains(self, theta: BoundaryRay, c: int, y: Word) -> bool:
        if c < 0:
            raise ValueError('A largura do tubo deve ser >= 0.')
        return self.tube_distance(theta, y) <= c

    def tube_enumerate(self, theta: BoundaryRay, c: int, depth: int) -> list[Word]:
        """Vertices y with d(y, ray) <= c and |y| <= depth, ordered by (|y|, word)."""
        if c < 0 or depth < 0:
            raise ValueError('Largura e profundidade do tubo devem ser >= 0.')
        self.validate_ray(theta)
        found: list[Word] = []
        for level in range(depth + 1):
            anchor = theta.vertex(level)
            found.append(anchor)
            if c == 0 or level == depth:
                continue
            ray_index = theta.index_at(level)
            for index in range(self.children_count(anchor)):
                if index != ray_index:
                    self._collect_branch(anchor + (index,), c - 1, depth, found)
        found.sort(key=lambda word: (len(word), word))
        return found

    def _collect_branch(self, vertex: Word, remaining: int, depth: int, found: list[Word]) -> None:
        stack = [(vertex, remaining)]
        while stack:
            current, budget = stack.pop()
            if len(current) > depth:
                continue
            found.append(current)
            if budget > 0:
                stack.extend((child, budget - 1) for child in self.children(current))
