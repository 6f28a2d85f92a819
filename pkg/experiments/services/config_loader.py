from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from django.conf import settings

from TreeWalks.services.harmonic_service import Thresholds
from TreeWalks.services.tree_model import TreeModel, TreeSpec, TreeSpecError, format_word

from ..serializers import ExperimentConfigSerializer


logger = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class SolverConfig:
    depth: int
    tol: float
    window: Optional[int] = None


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int
    horizon: int
    seed: int
    workers: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    tree: TreeSpec
    solver: SolverConfig
    simulation: SimulationConfig
    thresholds: Thresholds
    sigmas: float
    sections: dict
    output_dir: Path

    def section(self, name: str) -> dict:
        return self.sections[name]

    def build_tree(self) -> TreeModel:
        return TreeModel(self.tree)

    @property
    def workers(self) -> int:
        if self.simulation.workers is not None:
            return self.simulation.workers
        return int(getattr(settings, 'SIMULATION_WORKERS', 1))

    def to_dict(self) -> dict:
        """Every input that can change a report; the output directory is excluded."""
        return {
            'tree': self.tree.to_dict(),
            'solver': {'depth': self.solver.depth, 'tol': self.solver.tol, 'window': self.solver.window},
            'simulation': {
                'n_paths': self.simulation.n_paths,
                'horizon': self.simulation.horizon,
                'seed': self.simulation.seed,
            },
            'thresholds': {**self.thresholds.to_dict(), 'sigmas': self.sigmas},
            'sections': _jsonable(self.sections),
        }


def _jsonable(value):
    if isinstance(value, dict):
        return {key: _jsonable(item) for key, item in value.items()}
    if isinstance(value, tuple) and all(isinstance(item, int) for item in value):
        return format_word(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    return value


def _flatten_errors(errors, prefix: str = '') -> list[str]:
    messages = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            messages.extend(_flatten_errors(value, f'{prefix}{key}.'))
    elif isinstance(errors, list):
        for item in errors:
            messages.extend(_flatten_errors(item, prefix))
    else:
        messages.append(f'{prefix.rstrip(".")}: {errors}')
    return messages


def read_payload(path) -> dict:
    config_path = Path(path)
    try:
        with config_path.open(encoding='utf-8') as handle:
            payload = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f'Arquivo de configuracao nao encontrado: {config_path}.') from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f'JSON invalido em {config_path}: {exc}.') from exc
    if not isinstance(payload, dict):
        raise ConfigError('A configuracao deve ser um objeto JSON.')
    return payload


def build_config(payload: dict, seed: Optional[int] = None, out=None) -> ExperimentConfig:
    serializer = ExperimentConfigSerializer(data=payload)
    if not serializer.is_valid():
        raise ConfigError('Configuracao invalida: ' + '; '.join(_flatten_errors(serializer.errors)))
    data = serializer.validated_data

    try:
        tree = TreeSpec.from_dict(data['tree'])
    except TreeSpecError as exc:
        raise ConfigError(f'TreeSpec invalido: {exc}') from exc

    simulation = dict(data['simulation'])
    if seed is not None:
        if not (0 <= int(seed) < 2**64):
            raise ConfigError('--seed deve ser um inteiro de 64 bits sem sinal.')
        simulation['seed'] = int(seed)

    output_dir = out or data['output_dir'] or getattr(settings, 'EXPERIMENTS_OUTPUT_DIR', 'runs')
    thresholds = data['thresholds']
    config = ExperimentConfig(
        tree=tree,
        solver=SolverConfig(**data['solver']),
        simulation=SimulationConfig(**simulation),
        thresholds=Thresholds(
            convergence=thresholds['convergence'],
            boundedness=thresholds['boundedness'],
            energy=thresholds['energy'],
        ),
        sigmas=thresholds['sigmas'],
        sections={name: data[name] for name in ('identities', 'lemmas', 'fatou', 'simulate')},
        output_dir=Path(output_dir),
    )
    logger.info('Configuracao carregada: arvore=%s seed=%s saida=%s', tree.kind, config.simulation.seed, config.output_dir)
    return config


def load_config(path=None, seed: Optional[int] = None, out=None) -> ExperimentConfig:
    if path is None:
        path = getattr(settings, 'EXPERIMENTS_DEFAULT_CONFIG')
    return build_config(read_payload(path), seed=seed, out=out)
