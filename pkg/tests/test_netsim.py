import unittest

import numpy as np
from scipy import stats

from metapower.errors import DegenerateGeometry, ShapeMismatch, ValidationError
from metapower.netsim import (
    GSO_NONE, ChannelRealization, RngStream, SimConfig, Topology, dbm_to_linear,
    draw_fading, draw_topology, generate_meta_dataset, generate_period,
    pathloss_matrix, realize_channel
)

from helpers import make_period, small_sim


def two_link_topology(adjacency=None):
    if adjacency is None:
        adjacency = np.ones((2, 2), dtype=bool)
    return Topology(
        period_id=0,
        k=2,
        tx_positions=np.array([[0.0, 0.0], [5.0, 0.0]]),
        rx_positions=np.array([[1.0, 0.0], [5.0, 1.0]]),
        adjacency=adjacency
    )


class TestUnits(unittest.TestCase):

    def test_dbm_to_linear(self):
        """Test conversion of dBm to milliwatts."""
        self.assertAlmostEqual(dbm_to_linear(-70), 1e-7, places=20)
        self.assertEqual(dbm_to_linear(0), 1.0)
        self.assertAlmostEqual(dbm_to_linear(-35), 10 ** -3.5, places=15)
        cfg = SimConfig()
        self.assertAlmostEqual(cfg.sigma2, 1e-7, places=20)
        self.assertAlmostEqual(cfg.pmax, 3.1623e-4, places=8)


class TestSimConfig(unittest.TestCase):

    def test_defaults(self):
        """Test the default channel parameters."""
        cfg = SimConfig()
        self.assertEqual(cfg.gamma, 2.2)
        self.assertFalse(cfg.is_fixed_size)
        self.assertEqual((cfg.k_lo, cfg.k_hi), (4, 20))
        self.assertEqual((cfg.train_slots, cfg.test_slots), (50, 50))

    def test_invalid(self):
        """Test validation of inconsistent parameters."""
        with self.assertRaises(ValidationError):
            SimConfig(slots_per_period=10, train_slots=6, test_slots=5)
        with self.assertRaises(ValidationError):
            SimConfig(k_lo=8, k_hi=4)
        with self.assertRaises(ValidationError):
            SimConfig(gamma=0)
        with self.assertRaises(ValidationError):
            SimConfig(k=0)


class TestRngStream(unittest.TestCase):

    def test_children(self):
        """Test that children are reproducible and independent."""
        rng = RngStream(7)
        a = rng.child('a').uniform(size=5)
        self.assertTrue(np.array_equal(a, RngStream(7).child('a').uniform(size=5)))
        self.assertFalse(np.array_equal(a, rng.child('b').uniform(size=5)))
        self.assertFalse(np.array_equal(a, RngStream(8).child('a').uniform(size=5)))
        with self.assertRaises(ValidationError):
            RngStream(-1)

    def test_integers_inclusive(self):
        """Test that integer draws include the upper bound."""
        draws = RngStream(0).integers(4, 5, size=200)
        self.assertEqual(set(draws.tolist()), set([4, 5]))


class TestTopology(unittest.TestCase):

    def test_fixed_size_positions(self):
        """Test placement of a fixed number of links."""
        cfg = SimConfig(k=10)
        t = draw_topology(cfg, 3, RngStream(1))
        self.assertEqual(t.k, 10)
        self.assertEqual(t.period_id, 3)
        self.assertTrue(np.all(np.abs(t.tx_positions) <= 10))
        self.assertTrue(np.all(np.abs(t.rx_positions - t.tx_positions) <= 2.5))
        self.assertTrue(np.all(np.diag(t.adjacency)))

    def test_adjacency_radius(self):
        """Test the interference mask for zero, missing and growing radius."""
        t = draw_topology(SimConfig(k=8, interference_radius=0.0), 0, RngStream(2))
        self.assertTrue(np.array_equal(t.adjacency, np.eye(8, dtype=bool)))
        t = draw_topology(SimConfig(k=8), 0, RngStream(2))
        self.assertTrue(np.all(t.adjacency))
        small = draw_topology(SimConfig(k=8, interference_radius=2.0), 0, RngStream(2))
        large = draw_topology(SimConfig(k=8, interference_radius=6.0), 0, RngStream(2))
        self.assertTrue(np.all(large.adjacency[small.adjacency]))
        self.assertGreaterEqual(large.adjacency.sum(), small.adjacency.sum())

    def test_directional_adjacency(self):
        """Test that the mask compares transmitter j with receiver k, so it
        need not be symmetric."""
        cfg = SimConfig(k=10, interference_radius=4.0)
        rng = RngStream(12)
        asymmetric = 0
        for i in range(20):
            t = draw_topology(cfg, i, rng.child(i))
            expected = t.cross_distances() <= 4.0
            np.fill_diagonal(expected, True)
            self.assertTrue(np.array_equal(t.adjacency, expected))
            asymmetric += not np.array_equal(t.adjacency, t.adjacency.T)
        self.assertGreater(asymmetric, 0)

    def test_uniform_placement(self):
        """Test that transmitters are spread uniformly over the quadrants."""
        cfg = SimConfig(k=10)
        rng = RngStream(11)
        points = np.concatenate([
            draw_topology(cfg, i, rng.child(i)).tx_positions for i in range(200)
        ])
        quadrant = (points[:, 0] >= 0).astype(int) * 2 + (points[:, 1] >= 0).astype(int)
        counts = np.bincount(quadrant, minlength=4)
        self.assertGreater(stats.chisquare(counts).pvalue, 1e-3)


class TestChannel(unittest.TestCase):

    def test_pathloss(self):
        """Test path-loss for unit distance, distance four and masked pairs."""
        pl = pathloss_matrix(two_link_topology(), 2.2)
        self.assertAlmostEqual(pl[0, 0], 1.0)
        self.assertAlmostEqual(pl[1, 0], 4 ** -2.2, places=12)
        self.assertAlmostEqual(pl[1, 0], 0.047366, places=6)
        adjacency = np.array([[True, False], [True, True]])
        pl = pathloss_matrix(two_link_topology(adjacency), 2.2)
        self.assertEqual(pl[0, 1], 0.0)

    def test_degenerate_geometry(self):
        """Test rejection of a receiver on top of its transmitter."""
        t = Topology(
            period_id=0,
            k=1,
            tx_positions=np.array([[1.0, 1.0]]),
            rx_positions=np.array([[1.0, 1.0]]),
            adjacency=np.ones((1, 1), dtype=bool)
        )
        with self.assertRaises(DegenerateGeometry):
            pathloss_matrix(t, 2.2)

    def test_fading(self):
        """Test the second moment and determinism of Rayleigh fading."""
        fading = draw_fading(1000, RngStream(5))
        self.assertTrue(np.all(fading > 0))
        self.assertAlmostEqual(np.mean(np.square(fading)) / 2.0, 1.0, delta=0.01)
        self.assertTrue(np.array_equal(draw_fading(4, RngStream(3)), draw_fading(4, RngStream(3))))
        self.assertEqual(draw_fading(1, RngStream(3)).shape, (1, 1))

    def test_realize_channel(self):
        """Test combination of path-loss and fading."""
        t = two_link_topology()
        pl = np.array([[0.5, 0.0], [1.0, 0.5]])
        fading = np.array([[2.0, 3.0], [1.0, 2.0]])
        g = realize_channel(t, pl, fading, 4)
        self.assertTrue(np.allclose(g.gains, [[1.0, 0.0], [1.0, 1.0]]))
        self.assertEqual(g.slot, 4)
        with self.assertRaises(ShapeMismatch):
            realize_channel(t, np.ones((3, 3)), fading, 0)

    def test_realization_validation(self):
        """Test validation of gain matrices."""
        with self.assertRaises(ShapeMismatch):
            ChannelRealization(gains=np.ones((2, 3)))
        with self.assertRaises(ValidationError):
            ChannelRealization(gains=-np.ones((2, 2)))
        with self.assertRaises(ValidationError):
            ChannelRealization(gains=np.array([[np.inf]]))

    def test_shift_operator(self):
        """Test the spectral normalization of the shift operator."""
        g = ChannelRealization(gains=np.array([[4.0, 1.0], [1.0, 4.0]]))
        self.assertAlmostEqual(np.linalg.norm(g.shift_operator(), 2), 1.0)
        self.assertTrue(np.array_equal(g.shift_operator(GSO_NONE), g.gains))
        with self.assertRaises(ValidationError):
            g.shift_operator('unknown')


class TestDatasets(unittest.TestCase):

    def test_generate_period(self):
        """Test slot counts and the train/test split of a period."""
        cfg = SimConfig(k=6)
        period = generate_period(cfg, 0, RngStream(0))
        self.assertEqual(len(period.realizations), 100)
        self.assertEqual(len(period.train_idx), 50)
        self.assertEqual(len(period.test_idx), 50)
        self.assertFalse(set(period.train_idx) & set(period.test_idx))
        period = generate_period(small_sim(slots_per_period=2, train_slots=1, test_slots=1), 0, RngStream(0))
        self.assertEqual(period.train_idx, (0,))
        self.assertEqual(period.test_idx, (1,))

    def test_determinism(self):
        """Test that identical seeds give bitwise identical datasets."""
        cfg = SimConfig(k_lo=4, k_hi=8, slots_per_period=6, train_slots=3, test_slots=3)
        a = generate_meta_dataset(cfg, 3, RngStream(9))
        b = generate_meta_dataset(cfg, 3, RngStream(9))
        for pa, pb in zip(a, b):
            self.assertTrue(np.array_equal(pa.topology.tx_positions, pb.topology.tx_positions))
            for ga, gb in zip(pa.realizations, pb.realizations):
                self.assertTrue(np.array_equal(ga.gains, gb.gains))

    def test_meta_dataset(self):
        """Test number and sizes of meta-training periods."""
        cfg = SimConfig(slots_per_period=4, train_slots=2, test_slots=2)
        periods = generate_meta_dataset(cfg, 10, RngStream(1))
        self.assertEqual(len(periods), 10)
        self.assertEqual([p.period_id for p in periods], list(range(10)))
        for p in periods:
            self.assertTrue(4 <= p.k <= 20)
        self.assertEqual(len(generate_meta_dataset(cfg, 1, RngStream(1))), 1)
        with self.assertRaises(ValidationError):
            generate_meta_dataset(cfg, 0, RngStream(1))

    def test_masking(self):
        """Test that positive gains only occur on connected pairs."""
        cfg = small_sim(k=10, interference_radius=4.0)
        period = generate_period(cfg, 0, RngStream(4))
        for g in period.train_realizations() + period.test_realizations():
            self.assertTrue(np.all(period.topology.adjacency[g.gains > 0]))
            self.assertTrue(np.all(np.diag(g.gains) > 0))

    def test_budget(self):
        """Test truncation of the training slots and split validation."""
        period = make_period([np.eye(2)] * 6, 4)
        self.assertEqual(len(period.train_realizations()), 4)
        self.assertEqual(len(period.train_realizations(2)), 2)
        self.assertEqual(len(period.train_realizations(0)), 0)
        self.assertEqual(len(period.test_realizations()), 2)
        with self.assertRaises(ValidationError):
            type(period)(
                topology=period.topology,
                realizations=period.realizations,
                train_idx=(0, 1),
                test_idx=(1, 2)
            )


if __name__ == '__main__':
    unittest.main()
