import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings as hypothesis_settings, strategies as st

from TreeWalks.services.tree_model import (
    KERNEL_SEEDED_RANDOM,
    KIND_SEEDED_RANDOM,
    ROOT,
    BoundaryRay,
    TreeAddressError,
    TreeModel,
    TreeSpec,
    TreeSpecError,
    _clamped_projection,
    format_word,
    parse_probability,
    parse_word,
)


def homogeneous_tree(degree=3):
    return TreeModel(TreeSpec(degree=degree))


def random_tree(seed=7):
    return TreeModel(
        TreeSpec(
            kind=KIND_SEEDED_RANDOM,
            d_min=3,
            d_max=4,
            kernel=KERNEL_SEEDED_RANDOM,
            epsilon=0.2,
            eta=0.1,
            seed=seed,
        )
    )


binary_words = st.one_of(
    st.just(ROOT),
    st.tuples(st.integers(0, 2), st.lists(st.integers(0, 1), max_size=6)).map(
        lambda parts: (parts[0], *parts[1])
    ),
)


class TreeSpecTests(SimpleTestCase):
    def test_default_spec_is_the_uniform_ternary_tree(self):
        spec = TreeSpec()
        self.assertTrue(spec.is_symmetric)
        self.assertEqual(spec.degree_bounds, (3, 3))
        self.assertAlmostEqual(spec.rho, 0.5)
        self.assertAlmostEqual(spec.upper_bound, 1 / 3)

    def test_from_dict_accepts_fraction_strings(self):
        spec = TreeSpec.from_dict({'degree': 4, 'epsilon': '1/4', 'eta': '1/8'})
        self.assertEqual(spec.degree, 4)
        self.assertAlmostEqual(spec.epsilon, 0.25)
        self.assertAlmostEqual(spec.eta, 0.125)
        self.assertEqual(TreeSpec.from_dict(spec.to_dict()), spec)

    def test_parse_probability_rejects_garbage(self):
        self.assertAlmostEqual(parse_probability('2/3'), 2 / 3)
        self.assertEqual(parse_probability(0.5), 0.5)
        for value in ('', 'abc', '1/0', True):
            with self.assertRaises(TreeSpecError):
                parse_probability(value)

    def test_infeasible_specs_are_rejected(self):
        with self.assertRaises(TreeSpecError):
            TreeSpec(kind='binary')
        with self.assertRaises(TreeSpecError):
            TreeSpec(epsilon=0.4, eta=0.05)
        with self.assertRaises(TreeSpecError):
            TreeSpec(epsilon=0.1, eta=0.4)
        with self.assertRaises(TreeSpecError):
            TreeSpec(degree=2, epsilon=0.25)
        with self.assertRaises(TreeSpecError):
            TreeSpec.from_dict({'degree': 3, 'colour': 'red'})


class TreeModelTests(SimpleTestCase):
    def test_neighbors_put_the_parent_first(self):
        tree = homogeneous_tree()
        self.assertEqual(tree.neighbors(ROOT), ((0,), (1,), (2,)))
        self.assertEqual(tree.neighbors((0,)), ((), (0, 0), (0, 1)))
        self.assertEqual(tree.children_count((0,)), 2)
        self.assertEqual(tree.parent((0, 1)), (0,))
        self.assertAlmostEqual(tree.transition((0,), ROOT), 1 / 3)
        self.assertEqual(tree.transition((0,), (1,)), 0.0)

    def test_invalid_addresses_raise(self):
        tree = homogeneous_tree()
        for word in ((3,), (0, 2), (0, -1)):
            with self.assertRaises(TreeAddressError):
                tree.validate(word)
        self.assertFalse(tree.is_valid([0, 1]))
        with self.assertRaises(TreeAddressError):
            tree.parent(ROOT)

    def test_word_text_round_trip(self):
        self.assertEqual(format_word(ROOT), '/')
        self.assertEqual(format_word((0, 1, 1)), '/0/1/1')
        self.assertEqual(parse_word('/0/1/1'), (0, 1, 1))
        self.assertEqual(parse_word('/'), ROOT)
        with self.assertRaises(TreeAddressError):
            parse_word('/a/1')

    def test_ball_and_sphere_sizes(self):
        tree = homogeneous_tree()
        self.assertEqual(len(tree.ball(3)), 1 + 3 + 6 + 12)
        self.assertEqual(len(tree.sphere(2)), 6)
        self.assertEqual(tree.ball(0), [ROOT])

    def test_geodesic_passes_through_the_meeting_point(self):
        tree = homogeneous_tree()
        self.assertEqual(tree.geodesic((0, 1), (1,)), [(0, 1), (0,), (), (1,)])
        self.assertEqual(tree.distance((0, 1), (1,)), 3)
        self.assertEqual(tree.geodesic((2,), (2,)), [(2,)])

    def test_seeded_random_kernel_satisfies_the_bounds(self):
        tree = random_tree()
        for vertex in tree.ball(3):
            check = tree.kernel_check(vertex)
            self.assertTrue(check['valid'], check)
            self.assertIn(check['degree'], (3, 4))

    def test_seeded_random_kernel_bounds_hold_without_slack(self):
        for seed in range(5):
            tree = random_tree(seed)
            for vertex in tree.ball(4):
                probabilities = tree.record(vertex).probabilities
                self.assertGreaterEqual(min(probabilities), tree.spec.epsilon, vertex)
                self.assertLessEqual(max(probabilities), tree.spec.upper_bound, vertex)
                self.assertAlmostEqual(sum(probabilities), 1.0, delta=1e-12)

    def test_clamped_projection_stays_inside_the_bounds(self):
        projected = _clamped_projection(np.array([0.6, 0.3, 0.1, 0.0]), 0.1, 0.4)
        for value, expected in zip(projected, [0.4, 0.35, 0.15, 0.1]):
            self.assertAlmostEqual(value, expected, places=12)
        self.assertTrue(np.all(projected >= 0.1))
        self.assertTrue(np.all(projected <= 0.4))
        self.assertAlmostEqual(float(projected.sum()), 1.0, delta=1e-12)

    def test_seeded_random_tree_is_a_pure_function_of_the_seed(self):
        first, second, other = random_tree(7), random_tree(7), random_tree(8)
        vertices = first.ball(3)
        self.assertEqual([first.record(x) for x in vertices], [second.record(x) for x in vertices])
        self.assertNotEqual(
            [first.record(x).probabilities for x in vertices],
            [other.record(x).probabilities for x in vertices],
        )

    def test_deep_records_are_not_cached(self):
        tree = homogeneous_tree()
        deep = (0,) * 30
        self.assertEqual(tree.record_unchecked(deep).degree, 3)
        self.assertNotIn(deep, tree._records)


class BoundaryRayTests(SimpleTestCase):
    def test_ray_extends_through_child_zero(self):
        theta = BoundaryRay(prefix=(1,))
        self.assertEqual(theta.vertex(0), ROOT)
        self.assertEqual(theta.vertex(3), (1, 0, 0))
        self.assertEqual(theta.projection_depth((1, 0, 2)), 2)
        self.assertEqual(theta.projection_depth((2, 0)), 0)
        self.assertEqual(BoundaryRay.from_text('/2/1').prefix, (2, 1))

    def test_tube_enumeration_matches_a_ball_scan(self):
        tree = homogeneous_tree()
        theta = BoundaryRay(prefix=(0,))
        scanned = sorted(
            (vertex for vertex in tree.ball(3) if tree.tube_distance(theta, vertex) <= 1),
            key=lambda word: (len(word), word),
        )
        self.assertEqual(tree.tube_enumerate(theta, 1, 3), scanned)
        self.assertEqual(tree.tube_enumerate(theta, 0, 3), theta.vertices(3))

    @given(binary_words, binary_words, binary_words)
    @hypothesis_settings(max_examples=60, deadline=None)
    def test_distance_is_a_tree_metric(self, x, y, z):
        tree = homogeneous_tree()
        self.assertEqual(tree.distance(x, y), tree.distance(y, x))
        self.assertEqual(tree.distance(x, x), 0)
        self.assertLessEqual(tree.distance(x, z), tree.distance(x, y) + tree.distance(y, z))
        self.assertEqual(len(tree.geodesic(x, y)), tree.distance(x, y) + 1)

    @given(binary_words, st.integers(0, 3))
    @hypothesis_settings(max_examples=60, deadline=None)
    def test_projection_lies_on_the_ray_and_below_the_vertex(self, y, c):
        tree = homogeneous_tree()
        theta = BoundaryRay(prefix=(0, 1))
        anchor = tree.project(theta, y)
        self.assertEqual(anchor, theta.vertex(len(anchor)))
        self.assertEqual(y[: len(anchor)], anchor)
        self.assertEqual(tree.tube_contains(theta, c, y), tree.distance(y, anchor) <= c)
