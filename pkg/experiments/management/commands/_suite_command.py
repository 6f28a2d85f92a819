from __future__ import annotations

import logging
import time

from django.core.management.base import BaseCommand, CommandError

from experiments.services.config_loader import ConfigError, load_config
from experiments.services.reports import SuiteReport


logger = logging.getLogger(__name__)

EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2


class SuiteCommand(BaseCommand):
    """Shared --config/--out/--seed handling; subclasses implement run_suite."""

    suite_name = ''

    def add_arguments(self, parser):
        parser.add_argument('--config', default=None, help='Arquivo JSON de configuracao do experimento.')
        parser.add_argument('--out', default=None, help='Diretorio de saida (report.json e tabelas CSV).')
        parser.add_argument('--seed', type=int, default=None, help='Semente global (u64); substitui simulation.seed.')

    def run_suite(self, config) -> SuiteReport:
        raise NotImplementedError

    def handle(self, *args, **options):
        try:
            config = load_config(options['config'], seed=options['seed'], out=options['out'])
            started = time.perf_counter()
            report = self.run_suite(config)
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG_ERROR) from exc

        output_dir = config.output_dir / self.suite_name
        report_path = report.write(output_dir)
        logger.info('[%s] concluido em %.1fs.', self.suite_name, time.perf_counter() - started)

        counts = report.counts()
        self.stdout.write(
            f'{self.suite_name}: {counts["pass"]} ok, {counts["fail"]} falhas, '
            f'{counts["indeterminate"]} indeterminadas -> {report_path}'
        )
        if report.failed:
            names = ', '.join(check.name for check in report.failed)
            raise CommandError(f'Verificacoes com falha: {names}', returncode=EXIT_CHECK_FAILURE)
