from __future__ import annotations

import logging
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from django.conf import settings

from .potential_table import MartinKernel, PotentialRangeError
from .tree_model import BoundaryRay, TreeModel, Word, format_word


logger = logging.getLogger(__name__)

TERMINATION_HORIZON = 'horizon'
TERMINATION_ABSORBED = 'absorbed'
TERMINATION_EXITED = 'exited-set'

# Conditioned steps whose certified stochasticity interval is wider than this stop the path.
DEFAULT_MAX_KERNEL_WIDTH = 1e-6


class WalkHorizonError(Exception):
    pass


@dataclass(frozen=True)
class WalkPath:
    start: Word
    vertices: tuple[Word, ...]
    stream_id: int
    termination: str = TERMINATION_HORIZON
    truncated: bool = False

    @property
    def steps(self) -> int:
        return len(self.vertices) - 1

    @property
    def end(self) -> Word:
        return self.vertices[-1]

    def first_hit(self, y: Word) -> Optional[int]:
        for index, vertex in enumerate(self.vertices):
            if vertex == y:
                return index
        return None

    def hits(self, y: Word) -> bool:
        return self.first_hit(y) is not None

    def visits(self, y: Word, until: Optional[int] = None) -> int:
        """Number of n < until with X_n = y (the whole path when until is None)."""
        window = self.vertices if until is None else self.vertices[:until]
        return sum(1 for vertex in window if vertex == y)

    def to_rows(self, path_index: int) -> list[dict]:
        return [
            {'path': path_index, 'step': step, 'vertex': format_word(vertex)}
            for step, vertex in enumerate(self.vertices)
        ]


@dataclass(frozen=True)
class RngPlan:
    """Independent generator per task index, derived from one global seed."""

    seed: int
    family: int = 0

    def generator(self, task: int) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=(int(self.family), int(task)))
        return np.random.Generator(np.random.PCG64(sequence))


# -- vertex predicates (picklable, for exit times and parallel tasks) ----------


@dataclass(frozen=True)
class InBall:
    radius: int

    def __call__(self, y: Word) -> bool:
        return len(y) <= self.radius


@dataclass(frozen=True)
class InTube:
    theta: BoundaryRay
    width: int

    def __call__(self, y: Word) -> bool:
        return len(y) - self.theta.projection_depth(y) <= self.width


@dataclass(frozen=True)
class InSet:
    members: frozenset

    def __call__(self, y: Word) -> bool:
        return y in self.members


@dataclass(frozen=True)
class Outside:
    """Complement of a member predicate; stops a walk at its exit time."""

    member: Callable[[Word], bool]

    def __call__(self, y: Word) -> bool:
        return not self.member(y)


# -- samplers ----------------------------------------------------------------


def _choose(cumulative: Sequence[float], uniform: float) -> int:
    return min(bisect_right(cumulative, uniform), len(cumulative) - 1)


def simulate(
    tree: TreeModel,
    x0: Word,
    horizon: int,
    rng: np.random.Generator,
    *,
    stream_id: int = 0,
    until: Optional[Callable[[Word], bool]] = None,
    on_stop: str = TERMINATION_ABSORBED,
) -> WalkPath:
    """Up to `horizon` steps of the walk with kernel p.

    When `until` is given the path stops at the first X_k (k >= 0) for which it
    returns True, with termination `on_stop`.
    """
    if horizon < 0:
        raise ValueError('O horizonte deve ser >= 0.')
    tree.validate(x0)
    vertices = [x0]
    if until is not None and until(x0):
        return WalkPath(x0, tuple(vertices), stream_id, on_stop)

    current = x0
    uniforms = rng.random(horizon)
    for uniform in uniforms:
        record = tree.record_unchecked(current)
        current = record.neighbors[_choose(record.cumulative, uniform)]
        vertices.append(current)
        if until is not None and until(current):
            return WalkPath(x0, tuple(vertices), stream_id, on_stop)
    return WalkPath(x0, tuple(vertices), stream_id, TERMINATION_HORIZON)


def simulate_conditioned(
    kernel: MartinKernel,
    x0: Word,
    horizon: int,
    rng: np.random.Generator,
    *,
    stream_id: int = 0,
    until: Optional[Callable[[Word], bool]] = None,
    on_stop: str = TERMINATION_EXITED,
    max_kernel_width: float = DEFAULT_MAX_KERNEL_WIDTH,
) -> WalkPath:
    """Up to `horizon` steps of the h-process with kernel p^theta.

    The path is cut (truncated=True) before any step whose law is not
    certified: a neighbour outside the table's ball or a stochasticity
    interval wider than `max_kernel_width`.
    """
    if horizon < 0:
        raise ValueError('O horizonte deve ser >= 0.')
    kernel.table.check_in_ball(x0)
    vertices = [x0]
    if until is not None and until(x0):
        return WalkPath(x0, tuple(vertices), stream_id, on_stop)

    current = x0
    uniforms = rng.random(horizon)
    for uniform in uniforms:
        try:
            step = kernel.conditioned_kernel(current)
        except PotentialRangeError:
            return WalkPath(x0, tuple(vertices), stream_id, TERMINATION_HORIZON, truncated=True)
        if step.width > max_kernel_width:
            return WalkPath(x0, tuple(vertices), stream_id, TERMINATION_HORIZON, truncated=True)
        current = step.neighbors[_choose(step.cumulative, uniform)]
        vertices.append(current)
        if until is not None and until(current):
            return WalkPath(x0, tuple(vertices), stream_id, on_stop)
    return WalkPath(x0, tuple(vertices), stream_id, TERMINATION_HORIZON)


def exit_time(path: WalkPath, member: Callable[[Word], bool]) -> Optional[int]:
    for index, vertex in enumerate(path.vertices):
        if not member(vertex):
            return index
    return None


def sample_boundary(
    tree: TreeModel,
    x0: Word,
    depth: int,
    rng: np.random.Generator,
    *,
    horizon: Optional[int] = None,
) -> BoundaryRay:
    """First passage of the walk to distance `depth` from o, recorded as a ray prefix."""
    if depth < 1:
        raise ValueError('A profundidade de amostragem deve ser >= 1.')
    tree.validate(x0)
    if len(x0) > depth:
        raise ValueError(f'{format_word(x0)} esta alem da esfera de raio {depth}.')
    horizon = 200 * depth if horizon is None else horizon

    path = simulate(tree, x0, horizon, rng, until=lambda y: len(y) == depth)
    if len(path.end) != depth:
        raise WalkHorizonError(
            f'A caminhada nao atingiu a esfera de raio {depth} em {horizon} passos; aumente o horizonte.'
        )
    return BoundaryRay(prefix=path.end, source='sampled')


# -- batches -----------------------------------------------------------------


def run_streams(task: Callable[[int], object], n_tasks: int, workers: Optional[int] = None) -> list:
    """Evaluates task(0..n_tasks-1), in stream order, optionally across processes.

    `task` must be picklable when more than one worker is used; results are
    identical for any worker count.
    """
    if workers is None:
        workers = int(getattr(settings, 'SIMULATION_WORKERS', 1))
    if workers <= 1 or n_tasks < 2:
        return [task(index) for index in range(n_tasks)]
    chunksize = max(1, n_tasks // (workers * 8))
    logger.info('Executando %s tarefas em %s processos (lotes de %s).', n_tasks, workers, chunksize)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(task, range(n_tasks), chunksize=chunksize))


@dataclass(frozen=True)
class PathTask:
    """Plain walk for stream `index` of a plan; picklable for process pools."""

    tree: TreeModel
    plan: RngPlan
    x0: Word
    horizon: int
    until: Optional[Callable[[Word], bool]] = None
    on_stop: str = TERMINATION_ABSORBED

    def __call__(self, index: int) -> WalkPath:
        return simulate(
            self.tree,
            self.x0,
            self.horizon,
            self.plan.generator(index),
            stream_id=index,
            until=self.until,
            on_stop=self.on_stop,
        )


@dataclass(frozen=True)
class ConditionedPathTask:
    kernel: MartinKernel
    plan: RngPlan
    x0: Word
    horizon: int
    until: Optional[Callable[[Word], bool]] = None
    on_stop: str = TERMINATION_EXITED
    max_kernel_width: float = DEFAULT_MAX_KERNEL_WIDTH

    def __call__(self, index: int) -> WalkPath:
        return simulate_conditioned(
            self.kernel,
            self.x0,
            self.horizon,
            self.plan.generator(index),
            stream_id=index,
            until=self.until,
            on_stop=self.on_stop,
            max_kernel_width=self.max_kernel_width,
        )


@dataclass(frozen=True)
class MappedTask:
    """Applies a picklable summary to each simulated path so only the summary crosses processes."""

    simulate_path: Callable[[int], WalkPath]
    summarize: Callable[[WalkPath], object]

    def __call__(self, index: int):
        return self.summarize(self.simulate_path(index))


@dataclass(frozen=True)
class BoundaryTask:
    tree: TreeModel
    plan: RngPlan
    x0: Word
    depth: int
    horizon: Optional[int] = None

    def __call__(self, index: int) -> BoundaryRay:
        return sample_boundary(self.tree, self.x0, self.depth, self.plan.generator(index), horizon=self.horizon)
