from django.test import SimpleTestCase

from TreeWalks.services.green_solver import sector_masses, sphere_exit_distribution
from TreeWalks.services.potential_table import MartinKernel, green_tube, solve_potential
from TreeWalks.services.statistics_utils import mean_estimate, proportion_estimate
from TreeWalks.services.tree_model import KERNEL_SEEDED_RANDOM, KIND_SEEDED_RANDOM, ROOT, BoundaryRay, TreeModel, TreeSpec
from TreeWalks.services.walk_simulator import (
    TERMINATION_ABSORBED,
    TERMINATION_HORIZON,
    BoundaryTask,
    ConditionedPathTask,
    InBall,
    InSet,
    InTube,
    MappedTask,
    Outside,
    PathTask,
    RngPlan,
    WalkHorizonError,
    WalkPath,
    exit_time,
    run_streams,
    sample_boundary,
    simulate,
    simulate_conditioned,
)


def final_depth(path):
    return len(path.end)


def radial_increments(path):
    return [len(current) - len(previous) for previous, current in zip(path.vertices, path.vertices[1:]) if previous]


def ray_visits(path):
    return tuple(path.visits(vertex) for vertex in (ROOT, (0,), (0, 0)))


def random_tree():
    return TreeModel(
        TreeSpec(kind=KIND_SEEDED_RANDOM, d_min=3, d_max=4, kernel=KERNEL_SEEDED_RANDOM, epsilon=0.2, eta=0.1, seed=7)
    )


class RngPlanTests(SimpleTestCase):
    def test_streams_are_reproducible_and_independent(self):
        plan = RngPlan(seed=20240601, family=1)
        self.assertEqual(list(plan.generator(3).random(4)), list(plan.generator(3).random(4)))
        self.assertNotEqual(list(plan.generator(3).random(4)), list(plan.generator(4).random(4)))
        self.assertNotEqual(
            list(plan.generator(3).random(4)),
            list(RngPlan(seed=20240601, family=2).generator(3).random(4)),
        )


class SimulateTests(SimpleTestCase):
    def setUp(self):
        self.tree = TreeModel(TreeSpec())
        self.plan = RngPlan(seed=7, family=0)

    def test_zero_horizon_returns_the_start(self):
        path = simulate(self.tree, (1, 0), 0, self.plan.generator(0))
        self.assertEqual(path.vertices, ((1, 0),))
        self.assertEqual(path.steps, 0)
        self.assertEqual(path.termination, TERMINATION_HORIZON)
        with self.assertRaises(ValueError):
            simulate(self.tree, ROOT, -1, self.plan.generator(0))

    def test_consecutive_vertices_are_neighbours(self):
        path = simulate(self.tree, ROOT, 200, self.plan.generator(1))
        self.assertEqual(path.steps, 200)
        for previous, current in zip(path.vertices, path.vertices[1:]):
            self.assertEqual(self.tree.distance(previous, current), 1)

    def test_stopping_predicate_is_checked_at_time_zero(self):
        path = simulate(self.tree, (0,), 50, self.plan.generator(2), until=InSet(frozenset({(0,)})))
        self.assertEqual(path.vertices, ((0,),))
        self.assertEqual(path.termination, TERMINATION_ABSORBED)

        stopped = simulate(self.tree, ROOT, 500, self.plan.generator(2), until=Outside(InBall(2)))
        self.assertEqual(len(stopped.end), 3)
        self.assertEqual(stopped.termination, TERMINATION_ABSORBED)

    def test_one_step_law_at_the_root(self):
        paths = run_streams(PathTask(self.tree, RngPlan(seed=11), ROOT, 1), 6000, workers=1)
        for child in self.tree.children(ROOT):
            hits = sum(1 for path in paths if path.end == child)
            self.assertTrue(proportion_estimate(hits, len(paths)).within(1 / 3, sigmas=4), child)

    def test_parallel_streams_match_the_sequential_run(self):
        task = PathTask(self.tree, RngPlan(seed=5, family=3), ROOT, 30)
        self.assertEqual(run_streams(task, 20, workers=1), run_streams(task, 20, workers=2))
        depths = run_streams(MappedTask(task, final_depth), 20, workers=2)
        self.assertEqual(depths, [final_depth(path) for path in run_streams(task, 20, workers=1)])
        self.assertEqual(run_streams(task, 0, workers=2), [])


class WalkPathTests(SimpleTestCase):
    def setUp(self):
        self.path = WalkPath(ROOT, (ROOT, (0,), (0, 0), (0,)), stream_id=4)

    def test_exit_time_and_visits(self):
        self.assertEqual(exit_time(self.path, InBall(1)), 2)
        self.assertIsNone(exit_time(self.path, InBall(5)))
        self.assertEqual(exit_time(self.path, InSet(frozenset({(0,)}))), 0)
        self.assertEqual(exit_time(self.path, InTube(BoundaryRay(prefix=(1,)), 0)), 1)
        self.assertEqual(self.path.visits((0,)), 2)
        self.assertEqual(self.path.visits((0,), until=2), 1)
        self.assertEqual(self.path.first_hit((0, 0)), 2)
        self.assertFalse(self.path.hits((1,)))

    def test_rows_use_text_addresses(self):
        rows = self.path.to_rows(9)
        self.assertEqual(rows[0], {'path': 9, 'step': 0, 'vertex': '/'})
        self.assertEqual(rows[2], {'path': 9, 'step': 2, 'vertex': '/0/0'})


class ConditionedWalkTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tree = TreeModel(TreeSpec())
        cls.kernel = MartinKernel(solve_potential(cls.tree, 40, 1e-12), BoundaryRay(prefix=(0,)))

    def test_first_step_follows_the_conditioned_law(self):
        task = ConditionedPathTask(self.kernel, RngPlan(seed=13), ROOT, 1)
        paths = run_streams(task, 4000, workers=1)
        toward = sum(1 for path in paths if path.end == (0,))
        self.assertTrue(proportion_estimate(toward, len(paths)).within(2 / 3, sigmas=4))
        self.assertFalse(any(path.truncated for path in paths))

    def test_paths_are_cut_at_the_edge_of_the_certified_ball(self):
        shallow = MartinKernel(solve_potential(self.tree, 3, 1e-10), BoundaryRay(prefix=(0,)))
        path = simulate_conditioned(shallow, ROOT, 50, RngPlan(seed=3).generator(0), max_kernel_width=1.0)
        self.assertTrue(path.truncated)
        self.assertTrue(all(len(vertex) <= 3 for vertex in path.vertices))

        strict = simulate_conditioned(shallow, ROOT, 50, RngPlan(seed=3).generator(0), max_kernel_width=0.0)
        self.assertTrue(strict.truncated)
        self.assertEqual(strict.vertices, (ROOT,))


class BoundarySamplingTests(SimpleTestCase):
    def setUp(self):
        self.tree = TreeModel(TreeSpec())

    def test_sampled_ray_ends_on_the_sphere(self):
        theta = sample_boundary(self.tree, ROOT, 5, RngPlan(seed=1).generator(0))
        self.assertEqual(len(theta.prefix), 5)
        self.assertEqual(theta.source, 'sampled')
        self.assertTrue(self.tree.is_valid(theta.prefix))

    def test_short_horizon_raises(self):
        with self.assertRaises(WalkHorizonError):
            sample_boundary(self.tree, ROOT, 5, RngPlan(seed=1).generator(0), horizon=1)
        with self.assertRaises(ValueError):
            sample_boundary(self.tree, ROOT, 0, RngPlan(seed=1).generator(0))

    def test_sampled_sectors_are_uniform(self):
        rays = run_streams(BoundaryTask(self.tree, RngPlan(seed=17), ROOT, 4), 3000, workers=1)
        for sector in range(3):
            count = sum(1 for theta in rays if theta.prefix[0] == sector)
            self.assertTrue(proportion_estimate(count, len(rays)).within(1 / 3, sigmas=4), sector)

    def test_seeded_random_sectors_follow_the_sphere_exit_law(self):
        tree = random_tree()
        exact = sector_masses(sphere_exit_distribution(tree, ROOT, 8))
        rays = run_streams(BoundaryTask(tree, RngPlan(seed=19), ROOT, 8), 4000, workers=1)
        self.assertEqual({len(theta.prefix) for theta in rays}, {8})
        for sector, mass in exact.items():
            count = sum(1 for theta in rays if theta.prefix[:1] == sector)
            self.assertTrue(proportion_estimate(count, len(rays)).within(mass, sigmas=4), sector)


class RadialDriftTests(SimpleTestCase):
    def test_expected_drift_away_from_o_is_at_least_twice_eta(self):
        for tree in (TreeModel(TreeSpec()), random_tree()):
            for vertex in tree.ball(4)[1:]:
                parent_step = tree.record(vertex).probabilities[0]
                self.assertGreaterEqual(1 - 2 * parent_step, 2 * tree.spec.eta - 1e-12, vertex)

    def test_uniform_ternary_walk_drifts_at_one_third(self):
        tree = TreeModel(TreeSpec())
        paths = run_streams(PathTask(tree, RngPlan(seed=23), ROOT, 60), 200, workers=1)
        estimate = mean_estimate(step for path in paths for step in radial_increments(path))
        self.assertTrue(estimate.within(2 * tree.spec.eta, sigmas=4), estimate)

    def test_seeded_random_walk_drift_is_at_least_twice_eta(self):
        tree = random_tree()
        paths = run_streams(PathTask(tree, RngPlan(seed=29), ROOT, 60), 200, workers=1)
        estimate = mean_estimate(step for path in paths for step in radial_increments(path))
        self.assertGreaterEqual(estimate.estimate + 4 * estimate.stderr, 2 * tree.spec.eta)


class RayGreenFunctionTests(SimpleTestCase):
    def test_ray_green_function_counts_visits_of_the_killed_walk(self):
        tree = TreeModel(TreeSpec())
        theta = BoundaryRay(prefix=(0,))
        tube = green_tube(tree, theta, 0, 30, 1e-12)
        task = MappedTask(PathTask(tree, RngPlan(seed=31), ROOT, 200, until=Outside(InTube(theta, 0))), ray_visits)
        summaries = run_streams(task, 4000, workers=1)
        for position, vertex in enumerate((ROOT, (0,), (0, 0))):
            exact = tube.green(ROOT, vertex)
            estimate = mean_estimate(summary[position] for summary in summaries)
            self.assertTrue(estimate.within(exact.mid, sigmas=4, slack=exact.width), (vertex, estimate, exact))
