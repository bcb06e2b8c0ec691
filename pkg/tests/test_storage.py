import os
import shutil
import tempfile
import unittest

import numpy as np

from metapower.config import build_config, read_properties, to_properties
from metapower.errors import ParseError
from metapower.modular import ModuleSet
from metapower.netsim import RngStream, SimConfig, generate_meta_dataset
from metapower.regnn import ReGnnParams
from metapower.storage import (
    FORMAT_REGNN, RESULT_COLUMNS, PathFactory, ResultsWriter, document_format,
    read_assignment, read_csv, read_dataset, read_modules, read_params, write_assignment,
    write_cka, write_config, write_dataset, write_histogram, write_modules,
    write_params, write_training_log
)


class Row(object):
    def __init__(self, **kwargs):
        for key, value in kwargs.items():
            setattr(self, key, value)


class TestStorage(unittest.TestCase):

    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()
        self.paths = PathFactory(os.path.join(self.tmp_dir, 'out'))

    def tearDown(self):
        shutil.rmtree(self.tmp_dir)

    def test_dataset(self):
        """Test that datasets are read back bit-identical."""
        sim = SimConfig(k_lo=3, k_hi=6, slots_per_period=4, train_slots=2, test_slots=2, interference_radius=5.0)
        periods = generate_meta_dataset(sim, 3, RngStream(2))
        filename = self.paths.dataset_file()
        write_dataset(filename, periods, sim)
        result, sim_read = read_dataset(filename)
        self.assertEqual(sim_read, sim)
        self.assertEqual(len(result), 3)
        for a, b in zip(periods, result):
            self.assertEqual(a.period_id, b.period_id)
            self.assertEqual(a.train_idx, b.train_idx)
            self.assertEqual(a.test_idx, b.test_idx)
            self.assertTrue(np.array_equal(a.topology.tx_positions, b.topology.tx_positions))
            self.assertTrue(np.array_equal(a.topology.adjacency, b.topology.adjacency))
            for ga, gb in zip(a.realizations, b.realizations):
                self.assertTrue(np.array_equal(ga.gains, gb.gains))
        write_dataset(filename, periods)
        self.assertIsNone(read_dataset(filename)[1])

    def test_checkpoints(self):
        """Test policy, module and assignment files."""
        params = ReGnnParams(taps=np.random.default_rng(1).normal(size=(2, 4)), pmax=10 ** -3.5)
        filename = self.paths.params_file('fomaml', trial=0, value=10)
        write_params(filename, params, seed=3)
        result = read_params(filename)
        self.assertTrue(np.array_equal(result.taps, params.taps))
        self.assertEqual(result.pmax, params.pmax)
        self.assertEqual(document_format(filename), FORMAT_REGNN)
        mods = ModuleSet(modules=np.random.default_rng(2).normal(size=(3, 4)), pmax=1.0)
        filename = self.paths.params_file('modular:3')
        write_modules(filename, mods)
        self.assertTrue(np.array_equal(read_modules(filename).modules, mods.modules))
        with self.assertRaises(ParseError):
            read_params(filename)
        filename = self.paths.assignment_file()
        write_assignment(filename, (2, 0))
        self.assertEqual(read_assignment(filename), (2, 0))

    def test_malformed(self):
        """Test files that are not valid documents."""
        filename = os.path.join(self.tmp_dir, 'bad.yaml')
        with open(filename, 'w') as f:
            f.write('format: [\n')
        with self.assertRaises(ParseError):
            read_params(filename)
        with self.assertRaises(ParseError):
            document_format(filename)
        with open(filename, 'w') as f:
            f.write('- 1\n')
        self.assertIsNone(document_format(filename))

    def test_config(self):
        """Test that a written configuration reads back unchanged."""
        cfg = build_config({'experiment.methods': ['joint', 'modular:4'], 'sim.k': 10})
        filename = self.paths.config_file()
        write_config(filename, to_properties(cfg))
        with open(filename, 'r') as f:
            self.assertEqual(build_config(read_properties(f.read())), cfg)

    def test_results(self):
        """Test header, formatting and flushing of result rows."""
        filename = self.paths.results_file()
        with ResultsWriter(filename) as writer:
            writer.write(Row(experiment_id='e', x_value=10, method='joint', trial=0, sum_rate=1.23456789012, wall_ms=0.0))
            header, rows = read_csv(filename)
            self.assertEqual(header, RESULT_COLUMNS)
            self.assertEqual(rows, [['e', '10', 'joint', '0', '1.23456789', '0']])
        with open(filename, 'r') as f:
            self.assertEqual(f.readline().strip(), 'experiment_id,x_value,method,trial,sum_rate,wall_ms')

    def test_logs_and_reports(self):
        """Test training logs and report files."""
        filename = self.paths.training_log_file('fomaml', trial=1, value=0.5)
        self.assertTrue(filename.endswith('log_fomaml_trial1_0p5.csv'))
        write_training_log(filename, [(0, 1.5, 12.3), (1, 1.75, 20.0)], timing=False)
        _, rows = read_csv(filename)
        self.assertEqual(rows, [['0', '1.5', '0'], ['1', '1.75', '0']])
        filename = self.paths.cka_file(2.0)
        write_cka(filename, np.array([[1.0, 0.25], [0.25, 1.0]]))
        header, rows = read_csv(filename)
        self.assertEqual(header, ['module', 'm0', 'm1'])
        self.assertEqual(rows[1], ['1', '0.25', '1'])
        filename = self.paths.histogram_file(2)
        write_histogram(filename, np.array([0.5, 0.5, 0.0]))
        _, rows = read_csv(filename)
        self.assertEqual(rows[2], ['2', '0'])

    def test_paths(self):
        """Test file names of the path factory."""
        self.assertTrue(os.path.isdir(self.paths.out_dir))
        self.assertEqual(PathFactory.label(0.5), '0p5')
        self.assertEqual(PathFactory.label(-1), 'm1')
        self.assertEqual(PathFactory.label(10), '10')
        self.assertEqual(
            os.path.basename(self.paths.params_file('modular:4', trial=2, value=10)),
            'modular-4_trial2_10.yaml'
        )
        self.assertEqual(os.path.basename(self.paths.params_file('joint')), 'joint.yaml')
        self.assertEqual(os.path.basename(self.paths.cka_file(2.5)), 'cka_2p5.csv')


if __name__ == '__main__':
    unittest.main()
