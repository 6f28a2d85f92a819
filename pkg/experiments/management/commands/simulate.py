from experiments.services.simulate_runner import run_simulate

from ._suite_command import SuiteCommand


class Command(SuiteCommand):
    help = 'Simula caminhadas simples ou condicionadas e exporta os caminhos em CSV.'
    suite_name = 'simulate'

    def run_suite(self, config):
        return run_simulate(config)
