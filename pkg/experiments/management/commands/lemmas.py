from experiments.services.lemma_suite import run_lemmas

from ._suite_command import SuiteCommand


class Command(SuiteCommand):
    help = 'Executa as verificacoes dos lemas com caminhadas condicionadas (acertos, ocupacao, tubos, sobrevivencia, martingal).'
    suite_name = 'lemmas'

    def run_suite(self, config):
        return run_lemmas(config)
