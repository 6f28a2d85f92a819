from __future__ import annotations

import json
import logging
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import django
import numpy as np
import pandas as pd
import scipy

from TreeWalks.services.potential_table import Bracket
from TreeWalks.services.tree_model import format_word


logger = logging.getLogger(__name__)

STATUS_PASS = 'pass'
STATUS_FAIL = 'fail'
STATUS_INDETERMINATE = 'indeterminate'

PLUMBING = 'plumbing'

# Gate values that are policy choices of this tool rather than consequences of the theory.
POLICY_NOTE = 'Statistical gates (3 sigma, 0.95 agreement, 0.999 ray hits, 0.02 slack) are artifact policy.'


def jsonable(value):
    if isinstance(value, Bracket):
        return [jsonable(value.low), jsonable(value.high)]
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, tuple) and all(isinstance(item, (int, np.integer)) for item in value):
        return format_word(tuple(int(item) for item in value))
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        return number if math.isfinite(number) else None
    if isinstance(value, Path):
        return str(value)
    return value


@dataclass
class CheckRecord:
    name: str
    anchor: str
    value: object
    target: object
    margin: Optional[float]
    status: str
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'anchor': self.anchor,
            'value': jsonable(self.value),
            'target': jsonable(self.target),
            'margin': jsonable(self.margin),
            'status': self.status,
            'details': jsonable(self.details),
        }


def status_from(passed: Optional[bool]) -> str:
    if passed is None:
        return STATUS_INDETERMINATE
    return STATUS_PASS if passed else STATUS_FAIL


def environment_metadata() -> dict:
    return {
        'python': platform.python_version(),
        'django': django.get_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
    }


class SuiteReport:
    def __init__(self, suite: str, config: Optional[dict] = None) -> None:
        self.suite = suite
        self.config = config or {}
        self.checks: list[CheckRecord] = []
        self.tables: dict[str, pd.DataFrame] = {}
        self.metadata: dict = {}

    def add(
        self,
        name: str,
        anchor: str,
        value,
        target,
        passed: Optional[bool],
        margin: Optional[float] = None,
        **details,
    ) -> CheckRecord:
        record = CheckRecord(
            name=name,
            anchor=anchor,
            value=value,
            target=target,
            margin=margin,
            status=status_from(passed),
            details=details,
        )
        self.checks.append(record)
        log = logger.info if record.status != STATUS_FAIL else logger.warning
        log('[%s] %s: %s (valor=%s alvo=%s)', self.suite, name, record.status, jsonable(value), jsonable(target))
        return record

    def add_error(self, name: str, anchor: str, exc: Exception) -> CheckRecord:
        logger.exception('[%s] %s falhou com erro do solver.', self.suite, name)
        return self.add(name, anchor, None, None, False, error=f'{type(exc).__name__}: {exc}')

    def add_table(self, name: str, frame: pd.DataFrame) -> None:
        self.tables[name] = frame

    @property
    def failed(self) -> list[CheckRecord]:
        return [check for check in self.checks if check.status == STATUS_FAIL]

    def counts(self) -> dict:
        counts = {STATUS_PASS: 0, STATUS_FAIL: 0, STATUS_INDETERMINATE: 0}
        for check in self.checks:
            counts[check.status] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            'suite': self.suite,
            'summary': self.counts(),
            'checks': [check.to_dict() for check in self.checks],
            'config': jsonable(self.config),
            'metadata': jsonable(self.metadata),
            'environment': environment_metadata(),
            'policy': POLICY_NOTE,
            'tables': sorted(f'{name}.csv' for name in self.tables),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + '\n'

    def write(self, directory) -> Path:
        output = Path(directory)
        output.mkdir(parents=True, exist_ok=True)
        report_path = output / 'report.json'
        report_path.write_text(self.to_json(), encoding='utf-8')
        for name, frame in sorted(self.tables.items()):
            frame.to_csv(output / f'{name}.csv', index=False)
        logger.info('[%s] relatorio gravado em %s (%s tabelas).', self.suite, report_path, len(self.tables))
        return report_path
