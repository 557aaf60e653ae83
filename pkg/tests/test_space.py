"""
Unit tests for core.space
"""

import csv
import os
import shutil
import tempfile
import unittest

import numpy as np

from core.controller import forward, init_controller, sample
from core.errors import SpaceShapeError, UnknownLayer
from core.evaluator import EvalResult
from core.lowrank import rank_for_energy
from core.netmodel import LayeredModel, LayerSpec, validate_scheme
from core.space import (SearchSpace, build_space, guard_rank, guided_energies, guided_manual_scheme, manual_scheme,
                        sensitivity_sweep)


class DistanceEvaluator:
    """Error grows with the Frobenius distance from the reference weights"""

    def __init__(self, reference):
        self.reference = {layer.name: layer.weights for layer in reference.layers}
        self.calls = 0

    def evaluate(self, model):
        self.calls += 1
        distance = 0.0
        for layer in model.layers:
            dense = layer.dense() if hasattr(layer, 'dense') else layer.weights
            distance += float(np.linalg.norm(dense - self.reference[layer.name]))
        return EvalResult(10.0 + distance)


def toy_model(seed=0):
    rng = np.random.default_rng(seed)
    redundant = 10.0 * np.outer(rng.standard_normal(8), rng.standard_normal(8)) + 1e-3 * rng.standard_normal((8, 8))
    return LayeredModel([
        LayerSpec('input', rng.standard_normal((8, 8))),
        LayerSpec('hidden', redundant),
        LayerSpec('output', rng.standard_normal((8, 6))),
    ])


class TestBuildSpace(unittest.TestCase):
    """Energy grids to rank matrix"""

    def test_energy_row(self):
        model = LayeredModel([LayerSpec('w', np.diag([3.0, 2.0, 1.0] + [0.0] * 7))])
        space = build_space(model, [[0.5, 0.83, 1.0]])
        np.testing.assert_array_equal(space.options, [[1, 2, 3]])

    def test_guard(self):
        self.assertEqual(guard_rank(1024, 1024, 1024), 0)
        self.assertEqual(guard_rank(1024, 1024, 511), 511)
        self.assertEqual(guard_rank(1024, 1024, 512), 0)
        model = LayeredModel([LayerSpec('w', np.eye(6))])
        space = build_space(model, [[0.1, 1.0]])
        self.assertEqual(space.options[0, 1], 0)

    def test_size(self):
        space = SearchSpace(tuple(f"l{i}" for i in range(18)), np.ones((18, 5)), np.ones((18, 5)))
        self.assertEqual(space.size, 5 ** 18)

    def test_shape_errors(self):
        model = toy_model()
        with self.assertRaises(SpaceShapeError):
            build_space(model, [[0.5, 1.0]] * 2)
        with self.assertRaises(SpaceShapeError):
            build_space(model, [[0.5, 1.0], [0.5, 1.0], [0.5]])
        with self.assertRaises(SpaceShapeError):
            SearchSpace(('a',), [[1]], [[1.0]])

    def test_scheme_for(self):
        space = SearchSpace(('a', 'b'), [[1, 2, 0], [3, 4, 0]], [[0.3, 0.5, 1.0], [0.3, 0.5, 1.0]])
        self.assertEqual(space.scheme_for([1, 0]).ranks, (2, 3))
        with self.assertRaises(SpaceShapeError):
            space.scheme_for([0])

    def test_sampled_schemes_valid(self):
        """Every scheme a controller draws from the space fits the model and saves parameters"""
        model = toy_model()
        space = build_space(model, guided_energies(model, (0.3, 0.5, 0.7, 0.9, 1.0)))
        output = forward(init_controller(space.num_layers, space.num_options, 8, 8, seed=1))
        rng = np.random.default_rng(1)
        for _ in range(1000):
            scheme = validate_scheme(model, space.scheme_for(sample(output, rng).indices))
            for layer, rank in zip(model.searchable_layers, scheme):
                m, n = layer.shape
                self.assertTrue(rank == 0 or rank * (m + n) < m * n, f"{layer.name} rank {rank}")


class TestManualSchemes(unittest.TestCase):
    """Equal-energy baselines"""

    def setUp(self):
        self.model = toy_model()

    def test_full_energy_is_identity(self):
        self.assertTrue(manual_scheme(self.model, 1.0).is_identity)

    def test_matches_oracle(self):
        scheme = manual_scheme(self.model, 0.6)
        for layer, rank in zip(self.model.searchable_layers, scheme):
            m, n = layer.shape
            expected = rank_for_energy(np.linalg.svd(layer.weights, compute_uv=False), 0.6)
            self.assertEqual(rank, guard_rank(m, n, expected))

    def test_diagonal_example(self):
        model = LayeredModel([LayerSpec('w', np.diag([3.0, 2.0, 1.0] + [0.0] * 7))])
        self.assertEqual(manual_scheme(model, 0.5).ranks, (1,))

    def test_guided(self):
        names = self.model.searchable_names
        self.assertTrue(guided_manual_scheme(self.model, 0.5, names).is_identity)
        self.assertEqual(guided_manual_scheme(self.model, 0.5, ()), manual_scheme(self.model, 0.5))
        guided = guided_manual_scheme(self.model, 0.5, {'input', 'output'})
        self.assertEqual(guided[0], 0)
        self.assertEqual(guided[2], 0)
        self.assertEqual(guided[1], manual_scheme(self.model, 0.5)[1])
        with self.assertRaises(UnknownLayer):
            guided_manual_scheme(self.model, 0.5, {'missing'})

    def test_guided_energies(self):
        rows = guided_energies(self.model, (0.3, 0.5), excluded=('output',), conservative=('input',),
                               conservative_energies=(0.9, 1.0), overrides={'hidden': (0.1, 0.2)})
        self.assertEqual(rows, [[0.9, 1.0], [0.1, 0.2], [1.0, 1.0]])


class TestSensitivitySweep(unittest.TestCase):
    """One-layer-at-a-time sweep"""

    def setUp(self):
        self.model = toy_model()
        self.evaluator = DistanceEvaluator(self.model)
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def test_cardinality_and_full_energy(self):
        report = sensitivity_sweep(self.model, self.evaluator, (0.3, 0.5, 0.7, 1.0))
        self.assertEqual(len(report.entries), 12)
        self.assertEqual(report.baseline_error, 10.0)
        for name in self.model.searchable_names:
            self.assertEqual(report.error_at(name, 1.0), report.baseline_error)

    def test_redundant_layer_less_sensitive(self):
        report = sensitivity_sweep(self.model, self.evaluator, (0.3,))
        self.assertGreater(report.error_at('input', 0.3), report.error_at('hidden', 0.3))

    def test_workers_match_serial(self):
        serial = sensitivity_sweep(self.model, self.evaluator, (0.3, 0.7))
        threaded = sensitivity_sweep(self.model, DistanceEvaluator(self.model), (0.3, 0.7), workers=3)
        self.assertEqual(serial.rows(), threaded.rows())

    def test_layer_filter(self):
        report = sensitivity_sweep(self.model, self.evaluator, (0.3, 1.0), layers=['hidden'])
        self.assertEqual({entry.layer for entry in report.entries}, {'hidden'})
        with self.assertRaises(UnknownLayer):
            sensitivity_sweep(self.model, self.evaluator, (0.3,), layers=['nope'])

    def test_csv(self):
        path = os.path.join(self.tmpdir, 'sensitivity.csv')
        sensitivity_sweep(self.model, self.evaluator, (0.5, 1.0)).to_csv(path)
        with open(path, newline='', encoding='utf-8') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), 6)
        self.assertEqual(set(rows[0]), {'layer', 'energy', 'rank', 'error', 'delta_vs_baseline'})
        self.assertTrue(all(float(r['delta_vs_baseline']) == 0.0 for r in rows if float(r['energy']) == 1.0))


if __name__ == '__main__':
    unittest.main()
