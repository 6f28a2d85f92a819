from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import mean, median, pstdev
from typing import Iterable, Optional

import numpy as np
from scipy.stats import chisquare


def to_number(value, default=0.0) -> float:
    if value in (None, ''):
        return float(default)
    try:
        return float(value)
    except (TypeError, ValueError):
        return float(default)


def round_or_none(value, digits=12):
    if value is None:
        return None
    value = to_number(value)
    if not math.isfinite(value):
        return None
    return round(value, digits)


def descriptive_statistics(values):
    normalized = [to_number(value) for value in values if value is not None and math.isfinite(to_number(value))]
    if not normalized:
        return {
            'sample_size': 0,
            'mean': None,
            'median': None,
            'std_dev': None,
            'minimum': None,
            'maximum': None,
        }
    return {
        'sample_size': len(normalized),
        'mean': round_or_none(mean(normalized)),
        'median': round_or_none(median(normalized)),
        'std_dev': round_or_none(pstdev(normalized) if len(normalized) > 1 else 0.0),
        'minimum': round_or_none(min(normalized)),
        'maximum': round_or_none(max(normalized)),
    }


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    stderr: float
    n_paths: int
    seed: Optional[int] = None

    def deviation(self, target: float) -> float:
        return abs(self.estimate - target)

    def margin(self, target: float, sigmas: float = 3.0, slack: float = 0.0) -> float:
        """Positive when |estimate - target| <= slack + sigmas * stderr."""
        return slack + sigmas * self.stderr - self.deviation(target)

    def within(self, target: float, sigmas: float = 3.0, slack: float = 0.0) -> bool:
        return self.margin(target, sigmas, slack) >= 0

    def within_bracket(self, low: float, high: float, sigmas: float = 3.0) -> bool:
        return low - sigmas * self.stderr <= self.estimate <= high + sigmas * self.stderr

    def to_dict(self) -> dict:
        return {
            'estimate': self.estimate,
            'stderr': self.stderr,
            'n_paths': self.n_paths,
            'seed': self.seed,
        }


def mean_estimate(values: Iterable[float], seed: Optional[int] = None) -> MonteCarloEstimate:
    sample = np.asarray(list(values), dtype=float)
    if sample.size == 0:
        raise ValueError('Amostra vazia para a estimativa de Monte Carlo.')
    stderr = float(sample.std(ddof=1) / math.sqrt(sample.size)) if sample.size > 1 else 0.0
    return MonteCarloEstimate(float(sample.mean()), stderr, int(sample.size), seed)


def proportion_estimate(successes: int, total: int, seed: Optional[int] = None) -> MonteCarloEstimate:
    if total <= 0:
        raise ValueError('Amostra vazia para a estimativa de proporcao.')
    if successes < 0 or successes > total:
        raise ValueError('O numero de sucessos nao forma uma proporcao valida.')
    rate = successes / total
    stderr = math.sqrt(max(rate * (1 - rate), 0.0) / total)
    return MonteCarloEstimate(rate, stderr, int(total), seed)


def frequency_estimates(counts: dict, total: int, seed: Optional[int] = None) -> dict:
    return {key: proportion_estimate(count, total, seed) for key, count in counts.items()}


def goodness_of_fit(observed: Iterable[int], probabilities: Iterable[float]) -> dict:
    observed_counts = np.asarray(list(observed), dtype=float)
    expected = np.asarray(list(probabilities), dtype=float)
    total = observed_counts.sum()
    if total <= 0 or observed_counts.size < 2:
        return {'available': False, 'message': 'Amostra insuficiente para o teste qui-quadrado.'}
    expected = expected / expected.sum() * total
    statistic, p_value = chisquare(observed_counts, expected)
    return {
        'available': True,
        'statistic': round_or_none(statistic),
        'p_value': round_or_none(p_value),
        'sample_size': int(total),
    }
