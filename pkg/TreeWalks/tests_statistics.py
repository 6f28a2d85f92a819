from django.test import SimpleTestCase

from TreeWalks.services.statistics_utils import (
    descriptive_statistics,
    frequency_estimates,
    goodness_of_fit,
    mean_estimate,
    proportion_estimate,
    round_or_none,
    to_number,
)


class StatisticsUtilsTests(SimpleTestCase):
    def test_safe_formulas(self):
        self.assertEqual(to_number(None, default=2), 2.0)
        self.assertEqual(to_number('3.5'), 3.5)
        self.assertEqual(to_number('abc'), 0.0)
        self.assertIsNone(round_or_none(float('inf')))
        self.assertIsNone(round_or_none(None))

    def test_descriptive_statistics_skips_missing_values(self):
        stats = descriptive_statistics([2, None, 4, 6, float('nan')])
        self.assertEqual(stats['sample_size'], 3)
        self.assertEqual(stats['mean'], 4.0)
        self.assertEqual(stats['median'], 4.0)
        self.assertEqual(stats['minimum'], 2.0)
        self.assertEqual(descriptive_statistics([])['mean'], None)

    def test_proportion_estimate_and_sigma_gate(self):
        estimate = proportion_estimate(25, 100, seed=9)
        self.assertEqual(estimate.estimate, 0.25)
        self.assertAlmostEqual(estimate.stderr, (0.25 * 0.75 / 100) ** 0.5)
        self.assertTrue(estimate.within(0.3, sigmas=3))
        self.assertFalse(estimate.within(0.5, sigmas=3))
        self.assertTrue(estimate.within(0.5, sigmas=3, slack=0.2))
        self.assertTrue(estimate.within_bracket(0.26, 0.3, sigmas=1))
        self.assertEqual(estimate.to_dict()['seed'], 9)
        with self.assertRaises(ValueError):
            proportion_estimate(5, 0)
        with self.assertRaises(ValueError):
            proportion_estimate(7, 5)

    def test_mean_estimate_uses_the_sample_deviation(self):
        estimate = mean_estimate([1.0, 2.0, 3.0, 4.0])
        self.assertEqual(estimate.estimate, 2.5)
        self.assertAlmostEqual(estimate.stderr, (5 / 3) ** 0.5 / 2)
        self.assertEqual(mean_estimate([7.0]).stderr, 0.0)
        with self.assertRaises(ValueError):
            mean_estimate([])

    def test_frequencies_and_goodness_of_fit(self):
        estimates = frequency_estimates({'a': 30, 'b': 70}, 100)
        self.assertEqual(estimates['b'].estimate, 0.7)

        fit = goodness_of_fit([100, 100, 100], [1 / 3, 1 / 3, 1 / 3])
        self.assertTrue(fit['available'])
        self.assertEqual(fit['statistic'], 0.0)
        self.assertEqual(fit['p_value'], 1.0)
        self.assertFalse(goodness_of_fit([0, 0], [0.5, 0.5])['available'])
