from __future__ import annotations

import logging
from typing import Callable, Iterable

import numpy as np
from django.conf import settings
from scipy import sparse
from scipy.sparse.linalg import splu

from .potential_table import PotentialRangeError, ResourceLimitError, SolverConvergenceError
from .tree_model import TreeModel, Word, format_word


logger = logging.getLogger(__name__)


def _limits() -> dict:
    return {
        'direct': int(getattr(settings, 'GREEN_DIRECT_SOLVE_LIMIT', 5000)),
        'max_vertices': int(getattr(settings, 'GREEN_MAX_VERTICES', 400_000)),
        'residual': float(getattr(settings, 'NEUMANN_RESIDUAL_TOL', 1e-12)),
        'iterations': int(getattr(settings, 'NEUMANN_MAX_ITERATIONS', 100_000)),
    }


class RestrictedGreenSolver:
    """Linear solves with the kernel restricted to a finite set U (killed outside).

    G_U = (I - P_U)^{-1}. Rows of G_U come from the transposed system, columns
    and Dirichlet problems from the direct one. Sets up to
    GREEN_DIRECT_SOLVE_LIMIT vertices are factorized once; larger sets use the
    Neumann series, whose partial-sum residual is exactly the next term.
    """

    def __init__(self, tree: TreeModel, vertices: Iterable[Word]) -> None:
        limits = _limits()
        self.tree = tree
        self.vertices: list[Word] = list(dict.fromkeys(vertices))
        if not self.vertices:
            raise ValueError('O conjunto U deve ter ao menos um vertice.')
        if len(self.vertices) > limits['max_vertices']:
            raise ResourceLimitError(
                f'Conjunto com {len(self.vertices)} vertices excede o limite de {limits["max_vertices"]}.'
            )
        self.index = {vertex: position for position, vertex in enumerate(self.vertices)}
        self.residual_tol = limits['residual']
        self.max_iterations = limits['iterations']
        self.kernel = self._restricted_kernel()
        size = len(self.vertices)
        self._factor = None
        if size <= limits['direct']:
            system = sparse.identity(size, format='csc') - self.kernel.tocsc()
            self._factor = splu(system)
        logger.debug(
            'Sistema restrito com %s vertices (%s).',
            size,
            'fatoracao direta' if self._factor is not None else 'serie de Neumann',
        )

    def _restricted_kernel(self) -> sparse.csr_matrix:
        rows, cols, data = [], [], []
        for position, vertex in enumerate(self.vertices):
            record = self.tree.record(vertex)
            for neighbor, probability in zip(record.neighbors, record.probabilities):
                target = self.index.get(neighbor)
                if target is None:
                    continue
                rows.append(position)
                cols.append(target)
                data.append(probability)
        size = len(self.vertices)
        return sparse.csr_matrix((data, (rows, cols)), shape=(size, size))

    def __contains__(self, vertex: Word) -> bool:
        return vertex in self.index

    def _position(self, vertex: Word) -> int:
        position = self.index.get(vertex)
        if position is None:
            raise PotentialRangeError(f'Vertice {format_word(vertex)} fora do conjunto U.')
        return position

    def _unit(self, vertex: Word) -> np.ndarray:
        vector = np.zeros(len(self.vertices))
        vector[self._position(vertex)] = 1.0
        return vector

    def neumann(self, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
        operator = self.kernel.T.tocsr() if transpose else self.kernel
        total = np.array(rhs, dtype=float)
        term = total.copy()
        residual = float('inf')
        for _ in range(self.max_iterations):
            term = operator @ term
            total += term
            residual = float(np.max(np.abs(term), initial=0.0))
            if residual <= self.residual_tol:
                return total
        raise SolverConvergenceError(
            f'Serie de Neumann nao convergiu em {self.max_iterations} iteracoes (residuo {residual:.3e}).',
            worst_width=residual,
        )

    def solve(self, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
        if self._factor is not None:
            return self._factor.solve(np.asarray(rhs, dtype=float), trans='T' if transpose else 'N')
        return self.neumann(rhs, transpose=transpose)

    def row(self, x: Word) -> np.ndarray:
        """G_U(x, .) over self.vertices."""
        return self.solve(self._unit(x), transpose=True)

    def column(self, y: Word) -> np.ndarray:
        """G_U(., y) over self.vertices."""
        return self.solve(self._unit(y))

    def green(self, x: Word, y: Word) -> float:
        return float(self.row(x)[self._position(y)])

    def occupation(self, x: Word, weights: dict[Word, float]) -> float:
        """E_x[sum_{n < tau} phi(X_n)] = sum_y G_U(x, y) phi(y)."""
        row = self.row(x)
        return float(sum(row[self._position(vertex)] * value for vertex, value in weights.items()))


def green_restricted(tree: TreeModel, vertices: Iterable[Word], x: Word, y: Word) -> float:
    return RestrictedGreenSolver(tree, vertices).green(x, y)


def sphere_exit_distribution(tree: TreeModel, x: Word, depth: int) -> dict[Word, float]:
    """Law of the first vertex at distance `depth` from o for the walk started at x."""
    if depth < 1:
        raise ValueError('A profundidade da esfera deve ser >= 1.')
    tree.validate(x)
    if len(x) > depth:
        raise PotentialRangeError(f'{format_word(x)} esta fora da bola de raio {depth}.')
    sphere = tree.sphere(depth)
    if len(x) == depth:
        return {vertex: (1.0 if vertex == x else 0.0) for vertex in sphere}

    solver = RestrictedGreenSolver(tree, tree.iter_ball(depth - 1))
    occupation = solver.row(x)
    distribution = {}
    for vertex in sphere:
        parent = vertex[:-1]
        distribution[vertex] = float(occupation[solver.index[parent]] * tree.transition(parent, vertex))
    total = sum(distribution.values())
    logger.info('Lei de saida da esfera de raio %s a partir de %s: massa total %.12f', depth, format_word(x), total)
    return distribution


def sector_masses(distribution: dict[Word, float]) -> dict[Word, float]:
    """Aggregates a sphere law by the child of o each vertex descends from."""
    sectors: dict[Word, float] = {}
    for vertex, mass in distribution.items():
        if not vertex:
            continue
        key = vertex[:1]
        sectors[key] = sectors.get(key, 0.0) + mass
    return dict(sorted(sectors.items()))


def solve_ball_dirichlet(
    tree: TreeModel,
    radius: int,
    boundary: Callable[[Word], float],
) -> dict[Word, float]:
    """Harmonic extension inside the ball of `radius` of data given on its sphere."""
    if radius < 1:
        raise ValueError('O raio da bola de Dirichlet deve ser >= 1.')
    interior = tree.ball(radius - 1)
    sphere = tree.sphere(radius)
    data = {vertex: float(boundary(vertex)) for vertex in sphere}
    solver = RestrictedGreenSolver(tree, interior)

    rhs = np.zeros(len(interior))
    for vertex in interior:
        if len(vertex) != radius - 1:
            continue
        record = tree.record(vertex)
        rhs[solver.index[vertex]] = sum(
            probability * data[neighbor]
            for neighbor, probability in zip(record.neighbors, record.probabilities)
            if len(neighbor) == radius
        )
    values = solver.solve(rhs)
    solution = {vertex: float(values[solver.index[vertex]]) for vertex in interior}
    solution.update(data)
    return solution
