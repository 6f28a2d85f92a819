from experiments.services.fatou_suite import run_fatou

from ._suite_command import SuiteCommand


class Command(SuiteCommand):
    help = 'Executa o experimento de coocorrencia de indicadores ao longo de raios amostrados.'
    suite_name = 'fatou'

    def run_suite(self, config):
        return run_fatou(config)
