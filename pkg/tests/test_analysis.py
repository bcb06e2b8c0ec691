import math
import unittest

import numpy as np

from metapower.analysis import (
    PROBE_LINKS, PROBE_SIZE, ProbeBatch, assignment_histogram, cka_matrix,
    empirical_sinr_stats, linear_cka, make_probe_batch, module_outputs,
    relative_rate_gain
)
from metapower.errors import (
    DegenerateInput, EmptyInput, IndexOutOfRange, NonpositiveReference,
    ShapeMismatch, ValidationError
)
from metapower.modular import ModuleSet
from metapower.netsim import RngStream, SimConfig

from helpers import make_period


class TestLinearCka(unittest.TestCase):

    def setUp(self):
        self.z = np.random.default_rng(0).uniform(size=(20, 5))

    def test_identity_and_scale(self):
        """Test that a matrix is maximally similar to itself and to scaled
        copies."""
        self.assertAlmostEqual(linear_cka(self.z, self.z), 1.0)
        self.assertAlmostEqual(linear_cka(self.z, 3.0 * self.z), 1.0)
        self.assertAlmostEqual(linear_cka(self.z, self.z, centered=True), 1.0)

    def test_orthogonal(self):
        """Test that outputs on disjoint samples have zero similarity."""
        zi = np.array([[1.0, 2.0], [0.0, 0.0]])
        zj = np.array([[0.0, 0.0], [3.0, 1.0]])
        self.assertEqual(linear_cka(zi, zj), 0.0)

    def test_range_and_symmetry(self):
        """Test that values are symmetric and within [0, 1]."""
        rng = np.random.default_rng(1)
        for _ in range(20):
            zi = rng.normal(size=(10, 4))
            zj = rng.normal(size=(10, 4))
            value = linear_cka(zi, zj)
            self.assertGreaterEqual(value, 0.0)
            self.assertLessEqual(value, 1.0)
            self.assertAlmostEqual(value, linear_cka(zj, zi))

    def test_degenerate(self):
        """Test rejection of all-zero and mismatched outputs."""
        with self.assertRaises(DegenerateInput):
            linear_cka(np.zeros((4, 2)), self.z[:4, :2])
        with self.assertRaises(DegenerateInput):
            linear_cka(np.ones((4, 2)), self.z[:4, :2], centered=True)
        with self.assertRaises(ShapeMismatch):
            linear_cka(self.z, self.z[:, :2])

    def test_out_of_range(self):
        """Test that values outside [0, 1] are reported instead of clipped."""
        self.assertLessEqual(linear_cka(self.z, self.z), 1.0)
        broken = self.z.copy()
        broken[0, 0] = np.nan
        with np.errstate(all='ignore'):
            with self.assertRaises(FloatingPointError):
                linear_cka(broken, self.z)
            with self.assertRaises(FloatingPointError):
                linear_cka(np.full((4, 2), 1e200), self.z[:4, :2])


class TestCkaMatrix(unittest.TestCase):

    def setUp(self):
        self.probe = make_probe_batch(SimConfig(), RngStream(3).child('probe'))

    def test_batch(self):
        """Test size, inputs and determinism of the probe batch."""
        self.assertEqual(len(self.probe), PROBE_SIZE)
        self.assertEqual(self.probe.k, PROBE_LINKS)
        self.assertTrue(np.array_equal(self.probe.inputs, np.ones((PROBE_SIZE, PROBE_LINKS))))
        other = make_probe_batch(SimConfig(), RngStream(3).child('probe'))
        for a, b in zip(self.probe.realizations, other.realizations):
            self.assertTrue(np.array_equal(a.gains, b.gains))
        with self.assertRaises(EmptyInput):
            ProbeBatch(realizations=[], inputs=np.ones((0, 2)))
        with self.assertRaises(ShapeMismatch):
            ProbeBatch(realizations=self.probe.realizations[:2], inputs=np.ones((3, PROBE_LINKS)))

    def test_matrix(self):
        """Test diagonal, symmetry and range of the CKA matrix."""
        mods = ModuleSet(modules=np.array([[1.0, 0.5, 0.2], [0.2, 1.0, 0.1], [1.0, 0.5, 0.2]]), pmax=1.0)
        outputs = module_outputs(mods, self.probe)
        self.assertEqual(len(outputs), 3)
        self.assertEqual(outputs[0].shape, (PROBE_SIZE, PROBE_LINKS))
        cka = cka_matrix(mods, self.probe)
        self.assertEqual(cka.shape, (3, 3))
        self.assertTrue(np.array_equal(np.diag(cka), np.ones(3)))
        self.assertTrue(np.array_equal(cka, cka.T))
        self.assertTrue(np.all((cka >= 0) & (cka <= 1)))
        self.assertAlmostEqual(cka[0, 2], 1.0)

    def test_dead_module(self):
        """Test modules whose output vanishes on the probe."""
        mods = ModuleSet(modules=np.array([[1.0, 0.5], [-1.0, -0.5]]), pmax=1.0)
        with self.assertRaises(DegenerateInput):
            cka_matrix(mods, self.probe)
        cka = cka_matrix(mods, self.probe, fill=float('nan'))
        self.assertEqual(cka[0, 0], 1.0)
        self.assertTrue(math.isnan(cka[0, 1]))
        self.assertTrue(math.isnan(cka[1, 1]))

    def test_single_module(self):
        """Test that at least two modules are compared."""
        with self.assertRaises(ValidationError):
            cka_matrix(ModuleSet(modules=np.ones((1, 2)), pmax=1.0), self.probe)


class TestStatistics(unittest.TestCase):

    def test_histogram(self):
        """Test module frequencies over all layers of all runs."""
        freq = assignment_histogram([(0, 1), (1, 1)], 3)
        self.assertTrue(np.allclose(freq, [0.25, 0.75, 0.0]))
        self.assertAlmostEqual(freq.sum(), 1.0)
        with self.assertRaises(EmptyInput):
            assignment_histogram([], 3)
        with self.assertRaises(IndexOutOfRange):
            assignment_histogram([(0, 3)], 3)

    def test_relative_gain(self):
        """Test relative gains against a positive reference."""
        self.assertEqual(relative_rate_gain(2.0, 1.0), 0.5)
        self.assertEqual(relative_rate_gain(2.0, 2.0), 0.0)
        self.assertLess(relative_rate_gain(1.0, 2.0), 0.0)
        with self.assertRaises(NonpositiveReference):
            relative_rate_gain(0.0, 1.0)

    def test_snr(self):
        """Test the direct-link SNR summary."""
        period = make_period([np.diag([1.0, 10.0])] * 3, 2)
        summary = empirical_sinr_stats(period, 1.0, 1.0)
        self.assertAlmostEqual(summary.mean_db, 5.0)
        self.assertAlmostEqual(summary.min_db, 0.0)
        self.assertAlmostEqual(summary.max_db, 10.0)
        self.assertEqual(summary.count, 6)
        period = make_period([np.diag([0.0, 10.0])] * 2, 1)
        self.assertEqual(empirical_sinr_stats(period, 1.0, 1.0).count, 2)
        with self.assertRaises(EmptyInput):
            empirical_sinr_stats(make_period([np.zeros((2, 2))] * 2, 1), 1.0, 1.0)

    def test_snr_units(self):
        """Test the SNR for powers in linear milliwatts."""
        period = make_period([np.eye(3) * 1e-4] * 2, 1)
        summary = empirical_sinr_stats(period, 10 ** -3.5, 1e-7)
        self.assertAlmostEqual(summary.mean_db, 10 * math.log10(1e-4 * 10 ** -3.5 / 1e-7))


if __name__ == '__main__':
    unittest.main()
