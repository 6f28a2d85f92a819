from experiments.services.identity_suite import run_identities

from ._suite_command import SuiteCommand


class Command(SuiteCommand):
    help = 'Executa as verificacoes exatas de identidades (tabelas de potencial, nucleo de Martin, Green restrito).'
    suite_name = 'identities'

    def run_suite(self, config):
        return run_identities(config)
