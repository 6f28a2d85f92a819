import math
from dataclasses import replace

from django.test import SimpleTestCase, override_settings

from TreeWalks.services.green_solver import (
    RestrictedGreenSolver,
    sector_masses,
    solve_ball_dirichlet,
    sphere_exit_distribution,
)
from TreeWalks.services.potential_table import (
    ONE,
    Bracket,
    BracketInsufficientError,
    HomogeneousOracle,
    MartinKernel,
    PotentialRangeError,
    ResourceLimitError,
    SolverConvergenceError,
    green_tube,
    homogeneous_oracle,
    lower_bound_alpha,
    solve_potential,
)
from TreeWalks.services.tree_model import (
    KERNEL_SEEDED_RANDOM,
    KIND_SEEDED_RANDOM,
    ROOT,
    BoundaryRay,
    TreeModel,
    TreeSpec,
)


def ternary_tree():
    return TreeModel(TreeSpec())


class BracketTests(SimpleTestCase):
    def test_invalid_intervals_are_rejected(self):
        with self.assertRaises(ValueError):
            Bracket(0.2, 0.1)
        with self.assertRaises(ValueError):
            Bracket(math.nan, 1.0)
        with self.assertRaises(ValueError):
            Bracket(0.1, 0.2) * -1

    def test_arithmetic_keeps_endpoints_ordered(self):
        product = Bracket(0.2, 0.4) * Bracket(0.5, 0.5)
        self.assertAlmostEqual(product.low, 0.1)
        self.assertAlmostEqual(product.high, 0.2)
        ratio = Bracket(0.2, 0.4) / Bracket(0.5, 1.0)
        self.assertAlmostEqual(ratio.low, 0.2)
        self.assertAlmostEqual(ratio.high, 0.8)
        with self.assertRaises(BracketInsufficientError):
            Bracket(0.2, 0.4) / Bracket(0.0, 1.0)

    def test_containment_overlap_and_digits(self):
        bracket = Bracket(0.0, 0.005)
        self.assertTrue(bracket.contains(0.005))
        self.assertFalse(bracket.contains(0.006))
        self.assertTrue(bracket.contains(0.006, slack=0.01))
        self.assertTrue(bracket.overlaps(Bracket(0.005, 1.0)))
        self.assertFalse(bracket.overlaps(Bracket(0.1, 1.0)))
        self.assertEqual(bracket.certified_digits(), 2)
        self.assertEqual(ONE.certified_digits(), 17)


class PotentialTableTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tree = ternary_tree()
        cls.shallow = solve_potential(cls.tree, 12, 1e-10)
        cls.deep = solve_potential(cls.tree, 40, 1e-12)

    def test_brackets_contain_the_closed_forms(self):
        oracle = homogeneous_oracle(self.tree.spec)
        self.assertTrue(self.shallow.down((0,)).contains(oracle.edge_hitting, slack=1e-12))
        self.assertTrue(self.shallow.up((0, 1)).contains(oracle.edge_hitting, slack=1e-12))
        self.assertTrue(self.shallow.hitting(ROOT, (0, 1)).contains(oracle.hitting(2), slack=1e-12))
        self.assertTrue(self.shallow.green_diagonal(ROOT).contains(oracle.green_diagonal, slack=1e-12))
        self.assertEqual(self.shallow.hitting((1, 0), (1, 0)), ONE)

    def test_deep_table_pins_the_ternary_values(self):
        self.assertAlmostEqual(self.deep.down((0,)).mid, 0.5, places=9)
        self.assertAlmostEqual(self.deep.green_diagonal(ROOT).mid, 2.0, places=9)
        self.assertAlmostEqual(self.deep.green(ROOT, (2, 1, 1)).mid, 0.25, places=9)
        self.assertLessEqual(self.deep.root_width(), 1e-10)

    def test_hitting_is_multiplicative_through_the_meeting_point(self):
        x, y = (0, 1), (1, 0)
        whole = self.shallow.hitting(x, y)
        split = self.shallow.hitting(x, ROOT) * self.shallow.hitting(ROOT, y)
        self.assertAlmostEqual(whole.low, split.low, delta=1e-12 * whole.low)
        self.assertAlmostEqual(whole.high, split.high, delta=1e-12 * whole.high)

    def test_green_is_bounded_by_the_gambler_ruin_constant(self):
        self.assertEqual(self.shallow.green_upper_bound, 2.0)
        for vertex in self.tree.ball(3):
            self.assertLessEqual(self.shallow.green(ROOT, vertex).high, self.shallow.green_upper_bound + 1e-12)
            self.assertGreaterEqual(self.shallow.green_diagonal(vertex).low, 3 * self.tree.spec.epsilon**2)

    def test_brackets_tighten_with_depth(self):
        coarse = solve_potential(self.tree, 8, 1e-14)
        fine = solve_potential(self.tree, 16, 1e-14)
        self.assertGreater(coarse.root_width(), fine.root_width())
        self.assertTrue(coarse.down((0,)).overlaps(fine.down((0,))))

    def test_queries_outside_the_ball_raise(self):
        table = solve_potential(self.tree, 3, 1e-10)
        with self.assertRaises(PotentialRangeError):
            table.hitting(ROOT, (0, 0, 0, 0))
        with self.assertRaises(PotentialRangeError):
            table.down(ROOT)
        with self.assertRaises(PotentialRangeError):
            table.edge((0,), (1,))

    def test_evaluation_budget_raises_convergence_error(self):
        with self.assertRaises(SolverConvergenceError) as raised:
            solve_potential(self.tree, 12, 1e-14, max_evaluations=1)
        self.assertEqual(raised.exception.worst_edge[1], ROOT)

    def test_edge_export_frame(self):
        table = solve_potential(self.tree, 2, 1e-10)
        frame = table.to_frame(radius=1)
        self.assertEqual(list(frame.columns), ['from_vertex', 'to_vertex', 'F_low', 'F_high'])
        self.assertEqual(len(frame), 6)
        self.assertTrue((frame['F_low'] <= frame['F_high']).all())

    def test_seeded_random_tree_has_no_oracle(self):
        spec = TreeSpec(kind=KIND_SEEDED_RANDOM, d_min=3, d_max=4, kernel=KERNEL_SEEDED_RANDOM, epsilon=0.2, eta=0.1)
        self.assertIsNone(homogeneous_oracle(spec))
        table = solve_potential(TreeModel(spec), 6, 1e-10)
        self.assertLessEqual(table.green(ROOT, (1,)).high, table.green_upper_bound + 1e-12)


class MartinKernelTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tree = ternary_tree()
        cls.table = solve_potential(cls.tree, 40, 1e-12)
        cls.kernel = MartinKernel(cls.table, BoundaryRay(prefix=(0,)))

    def test_kernel_values_follow_projection_and_tube_distance(self):
        oracle = HomogeneousOracle(3)
        self.assertEqual(self.kernel.bracket(ROOT), ONE)
        self.assertAlmostEqual(self.kernel((0, 0, 0)), oracle.martin(3, 0), places=6)
        self.assertAlmostEqual(self.kernel((1,)), oracle.martin(0, 1), places=9)
        self.assertAlmostEqual(self.kernel((0, 1)), oracle.martin(1, 1), places=9)

    def test_conditioned_root_law(self):
        step = self.kernel.conditioned_kernel(ROOT)
        toward, away = HomogeneousOracle(3).conditioned_root_law()
        self.assertEqual(step.neighbors, ((0,), (1,), (2,)))
        self.assertAlmostEqual(step.probabilities[0], toward, places=8)
        self.assertAlmostEqual(step.probabilities[1], away, places=8)
        self.assertAlmostEqual(step.probabilities[2], away, places=8)
        self.assertLessEqual(step.defect, 1e-8)
        self.assertTrue(step.total.contains(1.0, slack=1e-8))

    def test_conditioned_kernel_needs_the_neighbours_in_the_ball(self):
        kernel = MartinKernel(solve_potential(self.tree, 3, 1e-10), BoundaryRay(prefix=(0,)))
        kernel.conditioned_kernel((0, 0))
        with self.assertRaises(PotentialRangeError):
            kernel.conditioned_kernel((0, 0, 0))

    def test_lower_bound_product_agrees_and_holds(self):
        check = self.kernel.lower_bound_product((1,))
        self.assertEqual(check.tube_distance, 1)
        self.assertAlmostEqual(check.direct.mid, 0.5, places=8)
        self.assertAlmostEqual(check.alpha, lower_bound_alpha(1 / 3, 1))
        self.assertTrue(check.agree)
        self.assertTrue(check.holds)

    def test_ratio_profile_overlaps_the_kernel(self):
        for level, ratio in self.kernel.ratio_limit_profile((1,), [2, 4]):
            self.assertTrue(ratio.overlaps(self.kernel.bracket((1,)), slack=1e-9), level)


class GreenSolverTests(SimpleTestCase):
    def setUp(self):
        self.tree = ternary_tree()

    def test_ball_of_radius_one_has_a_closed_form(self):
        solver = RestrictedGreenSolver(self.tree, self.tree.ball(1))
        self.assertAlmostEqual(solver.green(ROOT, ROOT), 1.5, places=12)
        self.assertAlmostEqual(solver.green(ROOT, (1,)), 0.5, places=12)
        self.assertIn((2,), solver)
        with self.assertRaises(PotentialRangeError):
            solver.green(ROOT, (0, 0))

    @override_settings(GREEN_DIRECT_SOLVE_LIMIT=0)
    def test_neumann_series_matches_the_direct_solve(self):
        neumann = RestrictedGreenSolver(self.tree, self.tree.ball(2))
        with override_settings(GREEN_DIRECT_SOLVE_LIMIT=5000):
            direct = RestrictedGreenSolver(self.tree, self.tree.ball(2))
        self.assertIsNone(neumann._factor)
        for vertex in self.tree.ball(2):
            self.assertAlmostEqual(neumann.green(ROOT, vertex), direct.green(ROOT, vertex), delta=1e-10)

    def test_singleton_set_has_unit_green_function(self):
        self.assertAlmostEqual(RestrictedGreenSolver(self.tree, [(0, 1)]).green((0, 1), (0, 1)), 1.0, places=14)

    @override_settings(GREEN_MAX_VERTICES=3)
    def test_vertex_limit_raises(self):
        with self.assertRaises(ResourceLimitError):
            RestrictedGreenSolver(self.tree, self.tree.ball(1))

    def test_sphere_exit_law_is_uniform_over_sectors(self):
        first = sphere_exit_distribution(self.tree, ROOT, 1)
        for vertex in ((0,), (1,), (2,)):
            self.assertAlmostEqual(first[vertex], 1 / 3, places=12)

        deeper = sphere_exit_distribution(self.tree, ROOT, 4)
        self.assertAlmostEqual(sum(deeper.values()), 1.0, delta=1e-10)
        for mass in sector_masses(deeper).values():
            self.assertAlmostEqual(mass, 1 / 3, places=10)

    def test_dirichlet_extension_of_a_constant(self):
        solution = solve_ball_dirichlet(self.tree, 3, lambda vertex: 5.0)
        for value in solution.values():
            self.assertAlmostEqual(value, 5.0, places=12)

    def test_tube_table_matches_a_truncated_ray_solve(self):
        theta = BoundaryRay(prefix=(0,))
        tube = green_tube(self.tree, theta, 0, 30, 1e-13)
        solver = RestrictedGreenSolver(self.tree, theta.vertices(30))
        self.assertAlmostEqual(tube.green_diagonal(ROOT).mid, solver.green(ROOT, ROOT), delta=1e-8)
        self.assertAlmostEqual(tube.green(ROOT, (0, 0)).mid, solver.green(ROOT, (0, 0)), delta=1e-8)
        self.assertLess(tube.green_diagonal(ROOT).high, 2.0)
        with self.assertRaises(PotentialRangeError):
            tube.hitting(ROOT, (1,))


class OutwardTree(TreeModel):
    """Ternary tree whose walk steps to the parent with probability 1/4 away from o."""

    def _build_record(self, word):
        record = super()._build_record(word)
        if not word:
            return record
        return replace(record, probabilities=(0.25, 0.375, 0.375), cumulative=(0.25, 0.625, 1.0))


class KernelMonotonicityTests(SimpleTestCase):
    def test_lowering_the_parent_step_lowers_every_parent_edge(self):
        spec = TreeSpec(epsilon=0.25, eta=0.125)
        uniform = solve_potential(TreeModel(spec), 40, 1e-12)
        outward = solve_potential(OutwardTree(spec), 40, 1e-12)
        for vertex in [(0,), (1, 2), (2, 0, 1)]:
            self.assertLess(outward.up(vertex).high, uniform.up(vertex).low, vertex)
            # F solves F = 1/4 / (1 - 3/4 F) on the outward tree.
            self.assertAlmostEqual(outward.up(vertex).mid, 1 / 3, places=8)
            self.assertAlmostEqual(uniform.up(vertex).mid, 1 / 2, places=6)

    def test_outward_kernel_still_satisfies_the_bounds(self):
        tree = OutwardTree(TreeSpec(epsilon=0.25, eta=0.125))
        for vertex in tree.ball(3):
            self.assertTrue(tree.kernel_check(vertex)['valid'], vertex)
