import json
import math
import tempfile
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import pandas as pd
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from TreeWalks.services.potential_table import Bracket
from TreeWalks.services.tree_model import BoundaryRay
from experiments.services.config_loader import ConfigError, build_config, load_config, read_payload
from experiments.services.fatou_suite import SOURCE_FORCED, load_function_suite, run_fatou
from experiments.services.identity_suite import run_identities
from experiments.services.lemma_suite import off_ray_vertex, run_lemmas
from experiments.services.reports import PLUMBING, STATUS_FAIL, STATUS_INDETERMINATE, STATUS_PASS, SuiteReport
from experiments.services.simulate_runner import run_simulate


def small_payload(**sections):
    payload = {
        'tree': {'kind': 'homogeneous', 'degree': 3, 'epsilon': '1/3', 'eta': '1/6'},
        'solver': {'depth': 8, 'tol': 1e-10},
        'simulation': {'n_paths': 200, 'horizon': 200, 'seed': 20240601},
        'thresholds': {'sigmas': 4.0},
        'identities': {'selection': []},
        'lemmas': {'selection': []},
        'fatou': {'functions': []},
        'simulate': {'n_paths': 1, 'horizon': 0},
    }
    payload.update(sections)
    return payload


class WorkspaceMixin:
    def setUp(self):
        super().setUp()
        workspace = tempfile.TemporaryDirectory()
        self.addCleanup(workspace.cleanup)
        self.workspace = Path(workspace.name)

    def write_json(self, name, payload):
        path = self.workspace / name
        path.write_text(json.dumps(payload), encoding='utf-8')
        return path


class ConfigLoaderTests(WorkspaceMixin, SimpleTestCase):
    def test_default_fixture_loads(self):
        config = load_config()
        self.assertEqual(config.tree.degree, 3)
        self.assertAlmostEqual(config.tree.rho, 0.5)
        self.assertEqual(config.solver.depth, 12)
        self.assertEqual(config.section('fatou')['theta0'], (1,))
        self.assertEqual(config.section('simulate')['x0'], ())
        self.assertEqual(config.sigmas, 3.0)
        self.assertEqual(config.output_dir, Path(settings.EXPERIMENTS_OUTPUT_DIR))

    def test_overrides_and_missing_sections_get_defaults(self):
        config = build_config({}, seed=5, out=self.workspace)
        self.assertEqual(config.simulation.seed, 5)
        self.assertEqual(config.output_dir, self.workspace)
        self.assertEqual(config.section('lemmas')['tube_survival']['slack'], 0.02)
        self.assertEqual(config.section('identities')['certification_depths'], [20, 24])
        with self.assertRaises(ConfigError):
            build_config({}, seed=-1)

    def test_report_config_uses_text_addresses_and_omits_the_output(self):
        summary = build_config(small_payload(), out=self.workspace).to_dict()
        self.assertNotIn('output_dir', summary)
        self.assertEqual(summary['sections']['simulate']['x0'], '/')
        self.assertEqual(summary['sections']['lemmas']['occupation']['vertices'][1], '/0')

    def test_invalid_configurations_raise_config_error(self):
        invalid = [
            {'tree': {'kind': 'binary'}},
            {'tree': {'epsilon': '1/2'}},
            {'tree': {'epsilon': 'abc'}},
            {'solver': {'tol': 0}},
            {'identities': {'selection': ['unknown_check']}},
            {'simulate': {'x0': '/a'}},
            {'lemmas': {'occupation': {'radius': 0}}},
        ]
        for payload in invalid:
            with self.assertRaises(ConfigError, msg=payload):
                build_config(payload)

    def test_unreadable_files_raise_config_error(self):
        with self.assertRaises(ConfigError):
            read_payload(self.workspace / 'missing.json')
        broken = self.workspace / 'broken.json'
        broken.write_text('{"tree": ', encoding='utf-8')
        with self.assertRaises(ConfigError):
            read_payload(broken)
        with self.assertRaises(ConfigError):
            read_payload(self.write_json('list.json', [1, 2]))


class SuiteReportTests(WorkspaceMixin, SimpleTestCase):
    def test_statuses_and_counts(self):
        report = SuiteReport('identities')
        report.add('ok', PLUMBING, 1.0, 1.0, True)
        report.add('bad', PLUMBING, 2.0, 1.0, False)
        report.add('unknown', PLUMBING, None, None, None)
        self.assertEqual(report.counts(), {STATUS_PASS: 1, STATUS_FAIL: 1, STATUS_INDETERMINATE: 1})
        self.assertEqual([check.name for check in report.failed], ['bad'])

        error = report.add_error('solver', PLUMBING, ValueError('boom'))
        self.assertEqual(error.status, STATUS_FAIL)
        self.assertEqual(error.details['error'], 'ValueError: boom')

    def test_json_is_strict_and_sorted(self):
        report = SuiteReport('lemmas', {'theta': (0, 1)})
        report.add('bracket', PLUMBING, Bracket(0.25, 0.5), math.nan, True, margin=math.inf)
        payload = json.loads(report.to_json())
        check = payload['checks'][0]
        self.assertEqual(check['value'], [0.25, 0.5])
        self.assertIsNone(check['target'])
        self.assertIsNone(check['margin'])
        self.assertEqual(payload['config'], {'theta': '/0/1'})
        self.assertIn('numpy', payload['environment'])

    def test_write_creates_report_and_tables(self):
        report = SuiteReport('simulate')
        report.add_table('paths', pd.DataFrame({'path': [0], 'step': [0], 'vertex': ['/']}))
        path = report.write(self.workspace / 'simulate')
        self.assertTrue(path.exists())
        self.assertEqual((self.workspace / 'simulate' / 'paths.csv').read_text(), 'path,step,vertex\n0,0,/\n')
        self.assertEqual(json.loads(path.read_text())['tables'], ['paths.csv'])


class IdentitySuiteTests(SimpleTestCase):
    def test_small_identity_run_passes(self):
        config = build_config(
            small_payload(
                identities={
                    'n_triples': 50,
                    'check_depth': 4,
                    'deep_depth': 40,
                    'soundness_paths': 2000,
                    'soundness_horizon': 200,
                    'sector_paths': 3000,
                }
            )
        )
        report = run_identities(config)
        self.assertEqual(report.failed, [], [check.to_dict() for check in report.failed])
        self.assertEqual(report.counts()[STATUS_INDETERMINATE], 0)
        names = {check.name for check in report.checks}
        self.assertIn('hitting_multiplicative', names)
        self.assertIn('h_transform_root_law', names)
        self.assertIn('bracket_soundness_/->/0', names)
        self.assertIn('solver_certification', report.tables)
        self.assertEqual(report.metadata['table_depth'], 8)
        self.assertIn('kernel_structure', names)
        self.assertIn('boundary_sectors', names)
        self.assertEqual(list(report.tables['potential_edges'].columns), ['from_vertex', 'to_vertex', 'F_low', 'F_high'])
        self.assertEqual(list(report.tables['martin_kernel'].columns), ['vertex', 'K_low', 'K_high'])
        self.assertEqual(len(report.tables['martin_kernel']), 1 + 3 + 6 + 12 + 24)
        self.assertEqual(len(report.tables['kernel_structure']), 1 + 3 + 6 + 12 + 24 + 48 + 96)

    def test_oracle_checks_are_indeterminate_on_random_trees(self):
        payload = small_payload(
            tree={'kind': 'seeded-random', 'd_min': 3, 'd_max': 4, 'kernel': 'seeded-random', 'epsilon': 0.2, 'eta': 0.1},
            identities={'selection': ['analytic_oracle', 'green_upper_bound', 'martin_root'], 'n_triples': 10},
        )
        report = run_identities(build_config(payload))
        statuses = {check.name: check.status for check in report.checks}
        self.assertEqual(statuses['hitting_analytic'], STATUS_INDETERMINATE)
        self.assertEqual(statuses['green_bounded'], STATUS_PASS)
        self.assertEqual(statuses['martin_root'], STATUS_PASS)

    def test_seeded_random_tree_sectors_and_kernel_structure(self):
        payload = small_payload(
            tree={'kind': 'seeded-random', 'd_min': 3, 'd_max': 4, 'kernel': 'seeded-random', 'epsilon': 0.2, 'eta': 0.1},
            identities={'selection': ['kernel_structure', 'boundary_sectors'], 'sector_depth': 8, 'sector_paths': 4000},
        )
        report = run_identities(build_config(payload))
        self.assertEqual(report.failed, [], [check.to_dict() for check in report.failed])
        sectors = report.tables['boundary_sectors']
        self.assertAlmostEqual(float(sectors['exit_mass'].sum()), 1.0, delta=1e-10)
        self.assertEqual(int(sectors['count'].sum()), 4000)
        chi_square = {check.name: check for check in report.checks}['boundary_sectors'].details['chi_square']
        self.assertTrue(chi_square['available'])

    def test_empty_selection_returns_an_empty_report(self):
        report = run_identities(build_config(small_payload()))
        self.assertEqual(report.checks, [])


class LemmaSuiteTests(SimpleTestCase):
    def test_off_ray_vertex(self):
        tree = build_config({}).build_tree()
        self.assertEqual(off_ray_vertex(tree, BoundaryRay(prefix=(0,)), 0, 1), (1,))
        self.assertEqual(off_ray_vertex(tree, BoundaryRay(prefix=(0,)), 2, 2), (0, 0, 1, 0))

    def test_small_lemma_run_passes(self):
        config = build_config(
            small_payload(
                lemmas={
                    'selection': ['tube_lower_bound', 'occupation', 'martingale_identity'],
                    'table_depth': 40,
                    'n_paths': 1500,
                    'occupation': {'radius': 2, 'vertices': ['/', '/0', '/1']},
                    'martingale_identity': {'radius': 3, 'horizon': 100},
                }
            )
        )
        report = run_lemmas(config)
        self.assertEqual(report.failed, [], [check.to_dict() for check in report.failed])
        names = [check.name for check in report.checks]
        self.assertIn('tube_lower_bound_c2', names)
        self.assertIn('occupation_/0', names)
        self.assertIn('martingale_identity_mixture', names)
        self.assertEqual(set(report.tables), {'tube_lower_bound', 'occupation', 'martin_kernel'})
        self.assertEqual(list(report.tables['martin_kernel'].columns), ['vertex', 'K_low', 'K_high'])

    def test_tube_survival_matches_the_conditioned_reach_probability(self):
        config = build_config(
            small_payload(
                lemmas={
                    'selection': ['tube_survival'],
                    'table_depth': 40,
                    'n_paths': 1500,
                    'tube_survival': {'width': 1, 'level': 4},
                }
            )
        )
        report = run_lemmas(config)
        self.assertEqual(report.failed, [], [check.to_dict() for check in report.failed])
        checks = {check.name: check for check in report.checks}
        self.assertEqual(checks['tube_survival_c1'].status, STATUS_PASS)
        self.assertEqual(checks['tube_green_ratio_c1'].status, STATUS_PASS)
        self.assertEqual(checks['tube_survival_c1'].details['target_vertex'], '/0/0/0/0')
        # Effective chain on the ternary ray: forward 6/7 at o, then forward 3/4 and back 3/16.
        self.assertTrue(checks['tube_survival_c1'].target.contains(1296 / 2081, slack=1e-9))

    def test_martingale_radius_must_fit_the_table(self):
        config = build_config(
            small_payload(
                lemmas={'selection': ['martingale_identity'], 'table_depth': 4, 'martingale_identity': {'radius': 3}}
            )
        )
        report = run_lemmas(config)
        self.assertEqual(report.checks[0].status, STATUS_FAIL)
        self.assertIn('PotentialRangeError', report.checks[0].details['error'])


class FatouSuiteTests(WorkspaceMixin, SimpleTestCase):
    def fatou_config(self, **overrides):
        section = {
            'theta0': '/1',
            'n_rays': 3,
            'sample_depth': 4,
            'scale': 3,
            'table_depth': 30,
            'width': 1,
            'paths_per_ray': 1,
            'horizon': 50,
            'functions': ['constant', 'K_theta0'],
        }
        section.update(overrides)
        return build_config(small_payload(fatou=section))

    def test_flags_table_and_forced_ray(self):
        report = run_fatou(self.fatou_config())
        frame = report.tables['fatou_flags']
        self.assertEqual(len(frame), 2 * 4)
        forced = frame[(frame['function'] == 'K_theta0') & (frame['source'] == SOURCE_FORCED)].iloc[0]
        self.assertEqual(forced['ray_prefix'], '/1')
        self.assertFalse(bool(forced['radial_bounded']))
        self.assertFalse(bool(forced['nt_bounded']))

        statuses = {check.name: check.status for check in report.checks}
        self.assertEqual(statuses['fatou_agreement_constant'], STATUS_PASS)
        self.assertIn('fatou_theta0_unbounded_K_theta0', statuses)

        cooccurrence = report.tables['fatou_cooccurrence']
        self.assertEqual(list(cooccurrence.columns), ['function', 'flag_a', 'flag_b', 'value_a', 'value_b', 'count'])
        constant_pairs = cooccurrence[cooccurrence['function'] == 'constant']
        self.assertEqual(int(constant_pairs['count'].sum()), 15 * 3)
        self.assertEqual(statuses['fatou_conditioned_paths'], STATUS_PASS)
        self.assertEqual(report.metadata['stop_depth'], 6)

        energy = report.tables['fatou_energy']
        self.assertEqual(
            list(energy.columns),
            ['function', 'depth_or_step', 'radial_sum', 'nt_sum_c', 'sup_c', 'martingale_value'],
        )
        self.assertEqual(set(energy['function']), {'constant', 'K_theta0'})

    def test_dirichlet_scale_is_capped_by_its_radius(self):
        report = run_fatou(self.fatou_config(functions=['rough_dirichlet'], scale=8, n_rays=1, paths_per_ray=0))
        self.assertEqual(report.metadata['scales'], {'rough_dirichlet': 4})
        statuses = {check.name: check.status for check in report.checks}
        self.assertEqual(statuses['fatou_agreement_rough_dirichlet'], STATUS_INDETERMINATE)
        self.assertEqual(statuses['fatou_conditioned_paths'], STATUS_INDETERMINATE)

    def test_table_too_shallow_for_the_outer_scale_is_rejected(self):
        with self.assertRaises(ConfigError):
            run_fatou(self.fatou_config(table_depth=12))

    def test_default_scale_gives_determinate_stochastic_flags(self):
        report = run_fatou(
            self.fatou_config(n_rays=1, sample_depth=4, scale=24, table_depth=72, paths_per_ray=2, horizon=400)
        )
        self.assertEqual(report.metadata['stop_depth'], 48)
        frame = report.tables['fatou_flags']
        self.assertEqual(int(frame['truncated_paths'].sum()), 0)

        forced = frame[(frame['function'] == 'K_theta0') & (frame['source'] == SOURCE_FORCED)].iloc[0]
        for name in ('stochastic_bounded', 'stochastic_converging', 'stochastic_energy_finite'):
            self.assertFalse(pd.isna(forced[name]), name)
            self.assertFalse(bool(forced[name]), name)

        constant = frame[frame['function'] == 'constant']
        for name in ('stochastic_bounded', 'stochastic_converging', 'stochastic_energy_finite'):
            self.assertTrue(constant[name].notna().all(), name)
            self.assertEqual([bool(value) for value in constant[name]], [True] * len(constant), name)

        statuses = {check.name: check.status for check in report.checks}
        self.assertEqual(statuses['fatou_conditioned_paths'], STATUS_PASS)
        self.assertEqual(statuses['fatou_theta0_unbounded_K_theta0'], STATUS_PASS)
        self.assertEqual(statuses['fatou_agreement_constant'], STATUS_PASS)

    def test_unknown_function_and_bad_suite_version(self):
        with self.assertRaises(ConfigError):
            run_fatou(self.fatou_config(functions=['missing']))
        suite = self.write_json('suite.json', {'version': 2, 'functions': [{'name': 'c', 'kind': 'constant'}]})
        with self.assertRaises(ConfigError):
            load_function_suite(suite)


class SimulateRunnerTests(SimpleTestCase):
    def test_zero_horizon_exports_the_start(self):
        report = run_simulate(build_config(small_payload()))
        self.assertEqual(report.tables['paths'].to_dict('records'), [{'path': 0, 'step': 0, 'vertex': '/'}])
        self.assertEqual(report.checks[0].status, STATUS_PASS)

    def test_conditioned_mode(self):
        payload = small_payload(
            simulate={
                'mode': 'conditioned',
                'theta': '/0',
                'table_depth': 30,
                'n_paths': 50,
                'horizon': 5,
                'max_kernel_width': 1e-3,
                'export_paths': False,
            }
        )
        report = run_simulate(build_config(payload))
        summary = report.tables['paths_summary']
        self.assertEqual(len(summary), 50)
        self.assertFalse(summary['truncated'].any())
        self.assertNotIn('paths', report.tables)
        self.assertEqual(report.metadata['terminations'], {'horizon': 50})


class CommandTests(WorkspaceMixin, SimpleTestCase):
    def run_command(self, name, payload, **options):
        config = self.write_json('config.json', payload)
        stdout = StringIO()
        call_command(name, config=str(config), out=str(self.workspace / 'runs'), stdout=stdout, **options)
        return stdout.getvalue()

    def test_config_errors_exit_with_code_two(self):
        with self.assertRaises(CommandError) as raised:
            call_command('identities', config=str(self.workspace / 'missing.json'), stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 2)

        with self.assertRaises(CommandError) as raised:
            self.run_command('simulate', small_payload(simulate={'mode': 'sideways'}))
        self.assertEqual(raised.exception.returncode, 2)

    def test_empty_selection_succeeds(self):
        output = self.run_command('identities', small_payload())
        self.assertIn('0 falhas', output)
        report = json.loads((self.workspace / 'runs' / 'identities' / 'report.json').read_text())
        self.assertEqual(report['summary'], {'pass': 0, 'fail': 0, 'indeterminate': 0})

    def test_failed_checks_exit_with_code_one(self):
        failing = SuiteReport('identities')
        failing.add('broken', PLUMBING, 1, 0, False)
        with patch('experiments.management.commands.identities.run_identities', return_value=failing):
            with self.assertRaises(CommandError) as raised:
                self.run_command('identities', small_payload())
        self.assertEqual(raised.exception.returncode, 1)
        self.assertTrue((self.workspace / 'runs' / 'identities' / 'report.json').exists())

    def test_seed_option_overrides_the_config(self):
        self.run_command('simulate', small_payload(), seed=99)
        report = json.loads((self.workspace / 'runs' / 'simulate' / 'report.json').read_text())
        self.assertEqual(report['config']['simulation']['seed'], 99)

    def test_outputs_are_identical_across_runs_and_worker_counts(self):
        sequential = small_payload(simulate={'n_paths': 30, 'horizon': 20})
        parallel = small_payload(simulate={'n_paths': 30, 'horizon': 20})
        parallel['simulation'] = {**parallel['simulation'], 'workers': 2}

        outputs = []
        for index, payload in enumerate((sequential, sequential, parallel)):
            out = self.workspace / f'run{index}'
            config = self.write_json(f'config{index}.json', payload)
            call_command('simulate', config=str(config), out=str(out), stdout=StringIO())
            outputs.append(
                (
                    (out / 'simulate' / 'report.json').read_bytes(),
                    (out / 'simulate' / 'paths.csv').read_bytes(),
                )
            )
        self.assertEqual(outputs[0], outputs[1])
        self.assertEqual(outputs[0], outputs[2])
