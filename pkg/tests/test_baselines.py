import unittest

import numpy as np

from metapower.baselines import (
    BASELINE_FULL_POWER, BASELINE_RANDOM_POWER, BASELINE_WMMSE, evaluate_baseline,
    full_power, random_power, wmmse_power
)
from metapower.errors import ValidationError
from metapower.netsim import RngStream
from metapower.regnn import sum_rate

from helpers import make_period, random_gains, random_period


class TestAllocations(unittest.TestCase):

    def test_full_power(self):
        """Test that every link transmits at maximum power."""
        g = np.ones((3, 3))
        self.assertTrue(np.array_equal(full_power(g, 0.5), np.full(3, 0.5)))
        self.assertEqual(full_power(np.ones((2, 3, 3)), 0.5).shape, (2, 3))

    def test_random_power(self):
        """Test bounds and determinism of random powers."""
        g = np.ones((4, 4))
        p = random_power(g, 2.0, RngStream(1))
        self.assertTrue(np.all((p >= 0) & (p <= 2.0)))
        self.assertTrue(np.array_equal(p, random_power(g, 2.0, RngStream(1))))


class TestWmmse(unittest.TestCase):

    def test_single_link(self):
        """Test that a single link transmits at full power."""
        p = wmmse_power(np.array([[0.8]]), 1.0, 0.1)
        self.assertAlmostEqual(p[0], 1.0)

    def test_interference_free(self):
        """Test that links without interference transmit at full power."""
        p = wmmse_power(np.diag([0.5, 1.0, 2.0]), 0.3, 0.01)
        self.assertTrue(np.allclose(p, 0.3))

    def test_improves_full_power(self):
        """Test bounds and that WMMSE is at least as good as its start."""
        rng = np.random.default_rng(2)
        for cross in [0.1, 0.5, 1.0]:
            gains = np.stack(random_gains(5, 10, rng, cross=cross))
            p = wmmse_power(gains, 1.0, 0.01)
            self.assertTrue(np.all(p >= 0))
            self.assertTrue(np.all(p <= 1.0 + 1e-12))
            wmmse = sum_rate(gains, p, 0.01)
            full = sum_rate(gains, full_power(gains, 1.0), 0.01)
            self.assertTrue(np.all(wmmse >= full - 1e-9))

    def test_zero_iterations(self):
        """Test that zero iterations keep full power."""
        self.assertTrue(np.allclose(wmmse_power(np.ones((2, 2)), 0.5, 0.1, iterations=0), 0.5))
        with self.assertRaises(ValidationError):
            wmmse_power(np.ones((2, 2)), 0.5, 0.1, iterations=-1)


class TestEvaluateBaseline(unittest.TestCase):

    def setUp(self):
        self.period = random_period(4, 3, 5, seed=6)

    def test_baselines(self):
        """Test the mean test-slot sum-rate of all baselines."""
        full = evaluate_baseline(BASELINE_FULL_POWER, self.period, 1.0, 0.1)
        gains = np.stack([g.gains for g in self.period.test_realizations()])
        self.assertAlmostEqual(full, np.mean(sum_rate(gains, np.ones((5, 4)), 0.1)))
        wmmse = evaluate_baseline(BASELINE_WMMSE, self.period, 1.0, 0.1)
        self.assertGreaterEqual(wmmse, full - 1e-9)
        a = evaluate_baseline(BASELINE_RANDOM_POWER, self.period, 1.0, 0.1, rng=RngStream(3))
        b = evaluate_baseline(BASELINE_RANDOM_POWER, self.period, 1.0, 0.1, rng=RngStream(3))
        self.assertEqual(a, b)
        self.assertGreaterEqual(a, 0.0)

    def test_invalid(self):
        """Test unknown baselines and a missing random stream."""
        with self.assertRaises(ValidationError):
            evaluate_baseline('max-power', self.period, 1.0, 0.1)
        with self.assertRaises(ValidationError):
            evaluate_baseline(BASELINE_RANDOM_POWER, self.period, 1.0, 0.1)

    def test_no_test_slots(self):
        """Test that a period without test slots has zero sum-rate."""
        period = make_period([np.eye(2)] * 2, 2)
        self.assertEqual(evaluate_baseline(BASELINE_FULL_POWER, period, 1.0, 0.1), 0.0)


if __name__ == '__main__':
    unittest.main()
