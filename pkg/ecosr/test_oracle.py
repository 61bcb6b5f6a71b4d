import unittest

import numpy as np

from .errors import ScaleMismatchError, ShapeError
from .model import ModelConfig
from .oracle import (avg_pool, check_jensen, hull_excursion, jensen_trials, l1_distance, make_posterior,
                     nn_upsample, oracle_report, posterior_training_check)


def lr_image(seed=0, size=8):
    return np.random.default_rng(seed).uniform(0.2, 0.8, size=(size, size, 3))


class TestOperators(unittest.TestCase):
    def test_avg_pool(self):
        y = np.arange(16, dtype=np.float64).reshape(4, 4)
        np.testing.assert_array_equal(avg_pool(y, 2), [[2.5, 4.5], [10.5, 12.5]])
        with self.assertRaises(ShapeError):
            avg_pool(np.zeros((5, 4)), 2)

    def test_nn_upsample(self):
        np.testing.assert_array_equal(nn_upsample(np.array([[1.0, 2.0]]), 2), [[1, 1, 2, 2], [1, 1, 2, 2]])

    def test_pool_inverts_upsample(self):
        x = lr_image(1)
        np.testing.assert_allclose(avg_pool(nn_upsample(x, 3), 3), x)

    def test_l1_distance(self):
        self.assertEqual(l1_distance(np.zeros(4), np.full(4, 0.5)), 0.5)
        with self.assertRaises(ShapeError):
            l1_distance(np.zeros(4), np.zeros(5))

    def test_hull_excursion(self):
        samples = np.array([[0.2, 0.6], [0.4, 0.1]])
        self.assertEqual(hull_excursion(np.array([0.3, 0.5]), samples), 0.0)
        self.assertAlmostEqual(hull_excursion(np.array([0.0, 0.8]), samples), 0.2)
        with self.assertRaises(ShapeError):
            hull_excursion(np.zeros(3), samples)


class TestPosterior(unittest.TestCase):
    def test_samples_share_the_observation(self):
        sample = make_posterior(lr_image(2), 8, 0.2, np.random.default_rng(0))
        self.assertEqual(sample.samples.shape, (8, 16, 16, 3))
        for y in sample.samples:
            np.testing.assert_allclose(avg_pool(y, 2), sample.x, atol=1e-12)
        np.testing.assert_allclose(sample.eps.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(avg_pool(sample.mu_true, 2), sample.x, atol=1e-12)
        self.assertGreater(sample.eps_norms().min(), 0)

    def test_zero_noise_collapses(self):
        sample = make_posterior(lr_image(3), 4, 0.0, np.random.default_rng(0))
        np.testing.assert_allclose(sample.eps, 0, atol=1e-12)
        np.testing.assert_allclose(sample.mu_true, nn_upsample(sample.x, 2), atol=1e-12)

    def test_single_sample_is_its_own_mean(self):
        sample = make_posterior(lr_image(4), 1, 0.2, np.random.default_rng(0))
        np.testing.assert_array_equal(sample.eps_norms(), [0.0])
        self.assertEqual(sample.farthest, 0)

    def test_needs_a_sample(self):
        with self.assertRaises(ValueError):
            make_posterior(lr_image(), 0, 0.2, np.random.default_rng(0))


class TestJensen(unittest.TestCase):
    def test_mean_is_never_farther(self):
        rng = np.random.default_rng(5)
        sample = make_posterior(lr_image(5), 16, 0.2, rng)
        result = jensen_trials(sample, 1000, rng)
        self.assertEqual(result["violations"], 0)
        self.assertGreaterEqual(result["min_gap"], -1e-6)

    def test_candidate_at_the_mean(self):
        sample = make_posterior(lr_image(6), 16, 0.2, np.random.default_rng(6))
        lhs, rhs = check_jensen(sample, sample.mu_true)
        self.assertEqual(rhs, 0.0)
        self.assertGreater(lhs, 0.0)
        with self.assertRaises(ShapeError):
            check_jensen(sample, sample.x)


class TestPosteriorFit(unittest.TestCase):
    def test_fit_lands_near_the_mean(self):
        rng = np.random.default_rng(7)
        sample = make_posterior(lr_image(7), 16, 0.2, rng)
        report = posterior_training_check(sample, ModelConfig(scale=2, channels=16, n_blocks=1), 500, seed=0)
        self.assertLessEqual(report.final_distance, 0.5 * report.initial_distance)
        self.assertLess(report.final_distance, report.farthest_distance)
        self.assertTrue(report.passed)
        self.assertEqual(report.distance_curve[0][0], 0)
        self.assertEqual(report.distance_curve[-1][0], 500)

    def test_single_sample_is_regressed(self):
        sample = make_posterior(lr_image(9), 1, 0.2, np.random.default_rng(9))
        report = posterior_training_check(sample, ModelConfig(scale=2, channels=16, n_blocks=1), 500, seed=0)
        self.assertLess(report.final_distance, 0.25 * report.initial_distance)
        self.assertTrue(report.passed)

    def test_pair_lands_in_the_median_set(self):
        sample = make_posterior(lr_image(10), 2, 0.2, np.random.default_rng(10))
        report = posterior_training_check(sample, ModelConfig(scale=2, channels=16, n_blocks=1), 800, seed=0)
        self.assertGreater(report.initial_excursion, 0)
        self.assertLess(report.final_excursion, 0.25 * report.initial_excursion)

    def test_requirements(self):
        sample = make_posterior(lr_image(8), 2, 0.2, np.random.default_rng(8))
        with self.assertRaises(ScaleMismatchError):
            posterior_training_check(sample, ModelConfig(scale=3), 1)
        gray = make_posterior(lr_image(8)[:, :, :1], 2, 0.2, np.random.default_rng(8))
        with self.assertRaises(ShapeError):
            posterior_training_check(gray, ModelConfig(scale=2), 1)


class TestReport(unittest.TestCase):
    def test_keys_and_single_sample(self):
        report = oracle_report(1, 10, seed=3)
        self.assertEqual(report["mean_eps_norm"], 0.0)
        self.assertEqual(report["violations"], 0)
        self.assertEqual(report["training_distance_curve"], [])
        self.assertNotIn("training_passed", report)

    def test_with_fit(self):
        report = oracle_report(4, 5, seed=1, lr_size=4, steps=20,
                               model_config=ModelConfig(scale=2, channels=4, n_blocks=0))
        self.assertEqual(report["jensen_trials"], 5)
        self.assertLess(report["max_abs_eps_mean"], 1e-12)
        self.assertIn("training_passed", report)
        self.assertEqual(report["training_distance_curve"][-1][0], 20)


if __name__ == "__main__":
    unittest.main()
