from django.test import SimpleTestCase

from TreeWalks.services.harmonic_service import (
    FLAG_NAMES,
    BallDirichletFunction,
    MartinCombination,
    VertexFunction,
    build_energy_report,
    classify,
    classify_path,
    distance_to_root,
    energy_term,
    evaluate,
    flags_agree,
    laplacian,
    martingale_track,
    merge_path_flags,
    nt_energy,
    nt_sup,
    radial_energy,
    root_indicator,
    stochastic_energy,
    stochastic_limit,
)
from TreeWalks.services.potential_table import MartinKernel, PotentialRangeError, solve_potential
from TreeWalks.services.tree_model import ROOT, BoundaryRay, TreeModel, TreeSpec
from TreeWalks.services.walk_simulator import WalkPath


def ray_path(theta, steps):
    return WalkPath(ROOT, tuple(theta.vertex(level) for level in range(steps + 1)), stream_id=0)


class HarmonicFixture(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tree = TreeModel(TreeSpec())
        cls.theta0 = BoundaryRay(prefix=(0,))
        cls.table = solve_potential(cls.tree, 40, 1e-12)
        cls.kernel = MartinKernel(cls.table, cls.theta0)
        cls.martin = MartinCombination(terms=[(1.0, cls.kernel)], name='K_theta0')
        cls.constant = MartinCombination(constant=5.0, name='constant')


class LaplacianTests(HarmonicFixture):
    def test_martin_kernel_is_harmonic(self):
        for vertex in (ROOT, (0,), (1, 1), (0, 0, 1)):
            residual = laplacian(self.tree, self.martin, vertex)
            self.assertLessEqual(abs(residual), max(1e-9, self.martin.laplacian_tolerance(self.tree, vertex)))
        self.assertAlmostEqual(laplacian(self.tree, self.constant, (2, 1)), 0.0, places=12)

    def test_test_functions_have_known_laplacians(self):
        indicator = VertexFunction(root_indicator)
        self.assertAlmostEqual(laplacian(self.tree, indicator, ROOT), -1.0)
        self.assertAlmostEqual(laplacian(self.tree, indicator, (0,)), 1 / 3)
        depth = VertexFunction(distance_to_root)
        self.assertAlmostEqual(laplacian(self.tree, depth, ROOT), 1.0)
        self.assertAlmostEqual(laplacian(self.tree, depth, (0,)), 1 / 3)

    def test_evaluation_depth_is_enforced(self):
        self.assertEqual(self.martin.evaluation_depth, 40)
        self.assertIsNone(self.constant.evaluation_depth)
        self.assertAlmostEqual(evaluate(self.martin, (0, 0)), 4.0, places=8)
        with self.assertRaises(PotentialRangeError):
            laplacian(self.tree, self.martin, (0,) * 40)
        self.assertEqual(self.martin.describe()['terms'][0]['table_depth'], 40)

    def test_dirichlet_extension(self):
        constant = BallDirichletFunction(self.tree, 3, lambda vertex: 5.0)
        self.assertAlmostEqual(constant(ROOT), 5.0, places=12)
        self.assertAlmostEqual(laplacian(self.tree, constant, (1, 1)), 0.0, places=12)
        self.assertEqual(constant.tube_depth_cap(1), 1)
        with self.assertRaises(PotentialRangeError):
            constant((0, 0, 0, 0))

        sector = BallDirichletFunction(self.tree, 3, lambda vertex: 1.0 if vertex[0] == 0 else 0.0)
        self.assertAlmostEqual(sector(ROOT), 1 / 3, places=10)
        self.assertAlmostEqual(laplacian(self.tree, sector, (0, 1)), 0.0, places=12)


class EnergyTests(HarmonicFixture):
    def test_energy_terms_along_the_kernel_ray(self):
        for level in range(4):
            expected = 4**level / 2
            term = energy_term(self.tree, self.martin, self.theta0.vertex(level))
            self.assertAlmostEqual(term, expected, delta=1e-8 * expected)

    def test_radial_and_tube_energies(self):
        radial = radial_energy(self.tree, self.martin, self.theta0, 3)
        self.assertAlmostEqual(radial.total, (1 + 4 + 16 + 64) / 2, delta=1e-6)
        self.assertTrue(radial.monotone)

        thin = nt_energy(self.tree, self.martin, self.theta0, 0, 3)
        for thin_term, radial_term in zip(thin.terms, radial.terms):
            self.assertAlmostEqual(thin_term, radial_term, delta=1e-9)
        wide = nt_energy(self.tree, self.martin, self.theta0, 1, 3)
        self.assertGreaterEqual(wide.total, radial.total)
        self.assertEqual(wide.kind, 'nt_c1')

    def test_stochastic_energy_and_martingale(self):
        path = ray_path(self.theta0, 3)
        energy = stochastic_energy(self.tree, self.martin, path)
        self.assertEqual(len(energy.terms), 3)
        self.assertAlmostEqual(energy.terms[0], 0.5, places=9)

        track = martingale_track(self.tree, self.martin, path)
        self.assertEqual(len(track), 4)
        self.assertAlmostEqual(track[0], 1.0, places=12)
        for value in martingale_track(self.tree, self.constant, path):
            self.assertAlmostEqual(value, 25.0, places=10)

    def test_nt_sup(self):
        self.assertAlmostEqual(nt_sup(self.tree, self.martin, self.theta0, 0, 5), 32.0, delta=1e-6)
        dirichlet = BallDirichletFunction(self.tree, 3, lambda vertex: 1.0)
        with self.assertRaises(PotentialRangeError):
            nt_sup(self.tree, dirichlet, self.theta0, 1, 2)

    def test_report_frame(self):
        path = WalkPath(ROOT, (ROOT, (1,), ROOT, (0,), (0, 0), (0, 1), (0,)), stream_id=0)
        report = build_energy_report(self.tree, self.constant, self.theta0, 1, 4, path=path)
        frame = report.to_frame()
        self.assertEqual(list(frame.columns), ['depth_or_step', 'radial_sum', 'nt_sum_c', 'sup_c', 'martingale_value'])
        self.assertEqual(len(frame), 7)
        self.assertTrue(report.monotone)


class ClassificationTests(HarmonicFixture):
    def test_constant_is_regular_everywhere(self):
        report = build_energy_report(self.tree, self.constant, self.theta0, 1, 4)
        flags = classify(report, 2)
        self.assertEqual(set(flags), set(FLAG_NAMES[:6]))
        self.assertTrue(all(flags.values()))
        self.assertTrue(all(value is None for value in classify(report, 3).values()))

    def test_kernel_blows_up_along_its_own_ray(self):
        report = build_energy_report(self.tree, self.martin, self.theta0, 1, 6)
        flags = classify(report, 3)
        self.assertFalse(flags['radial_bounded'])
        self.assertFalse(flags['nt_bounded'])
        self.assertFalse(flags['radial_converging'])
        self.assertFalse(flags['radial_energy_finite'])

    def test_kernel_converges_along_another_ray(self):
        report = build_energy_report(self.tree, self.martin, BoundaryRay(prefix=(1,)), 1, 24)
        flags = classify(report, 12)
        self.assertEqual(flags, {name: True for name in FLAG_NAMES[:6]})
        self.assertTrue(flags_agree(flags))

    def test_path_flags(self):
        constant_flags = classify_path(self.tree, self.constant, ray_path(self.theta0, 4), 2)
        self.assertEqual(constant_flags, {name: True for name in FLAG_NAMES[6:]})

        kernel_flags = classify_path(self.tree, self.martin, ray_path(self.theta0, 4), 2)
        self.assertEqual(kernel_flags, {name: False for name in FLAG_NAMES[6:]})

        short = classify_path(self.tree, self.constant, ray_path(self.theta0, 3), 2)
        self.assertTrue(all(value is None for value in short.values()))
        beyond_table = classify_path(self.tree, self.martin, ray_path(self.theta0, 4), 20)
        self.assertTrue(all(value is None for value in beyond_table.values()))

    def test_merging_and_agreement(self):
        first = {'stochastic_converging': True, 'stochastic_bounded': True, 'stochastic_energy_finite': None}
        second = {'stochastic_converging': False, 'stochastic_bounded': True, 'stochastic_energy_finite': None}
        merged = merge_path_flags([first, second])
        self.assertIsNone(merged['stochastic_converging'])
        self.assertTrue(merged['stochastic_bounded'])
        self.assertIsNone(merged['stochastic_energy_finite'])

        self.assertTrue(flags_agree({'a': True, 'b': None}))
        self.assertFalse(flags_agree({'a': True, 'b': False}))
        self.assertIsNone(flags_agree({'a': None}))

    def test_stochastic_limit_is_the_median_endpoint_value(self):
        depth = VertexFunction(distance_to_root)
        paths = [
            WalkPath(ROOT, (ROOT, (0,)), 0),
            WalkPath(ROOT, (ROOT, (0,), (0, 0)), 1),
            WalkPath(ROOT, (ROOT, (1,), (1, 1), (1, 1, 1)), 2),
        ]
        self.assertEqual(stochastic_limit(depth, paths), 2.0)
        self.assertIsNone(stochastic_limit(depth, []))
