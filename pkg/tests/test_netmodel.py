"""
Unit tests for core.netmodel
"""

import os
import shutil
import tempfile
import unittest

import numpy as np

from core.errors import FormatError, InvalidRank, UnknownLayer, ValidationError
from core.lowrank import svd, truncation_error
from core.netmodel import (CompressedModel, LayeredModel, LayerSpec, Scheme, apply_scheme, load_model,
                           save_model, scheme_speedup)


def random_model(rng, count, max_dim=12, frozen_every=0):
    layers = []
    for i in range(count):
        m, n = int(rng.integers(1, max_dim + 1)), int(rng.integers(1, max_dim + 1))
        searchable = not (frozen_every and i % frozen_every == frozen_every - 1)
        layers.append(LayerSpec(f"layer{i}", rng.standard_normal((m, n)), searchable))
    return LayeredModel(layers, {'arch': 'random'})


def random_scheme(rng, model):
    ranks = []
    for layer in model.searchable_layers:
        ranks.append(int(rng.integers(0, min(layer.shape) + 1)))
    return Scheme(tuple(ranks))


class TestLayeredModel(unittest.TestCase):
    """Model container"""

    def test_empty_and_duplicates(self):
        with self.assertRaises(ValidationError):
            LayeredModel([])
        with self.assertRaises(ValidationError):
            LayeredModel([LayerSpec('a', np.eye(2)), LayerSpec('a', np.eye(2))])

    def test_layer_validation(self):
        with self.assertRaises(ValidationError):
            LayerSpec('', np.eye(2))
        with self.assertRaises(ValidationError):
            LayerSpec('bad', np.array([[np.nan]]))

    def test_weights_are_read_only(self):
        layer = LayerSpec('a', np.eye(2))
        with self.assertRaises(ValueError):
            layer.weights[0, 0] = 5.0

    def test_unknown_layer(self):
        model = LayeredModel([LayerSpec('a', np.eye(2))])
        with self.assertRaises(UnknownLayer):
            model.layer('b')

    def test_factorization_cached(self):
        model = LayeredModel([LayerSpec('a', np.eye(3))])
        self.assertIs(model.factorization('a'), model.factorization('a'))


class TestApplyScheme(unittest.TestCase):
    """Scheme application"""

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_identity_scheme(self):
        model = random_model(self.rng, 4)
        compressed = apply_scheme(model, Scheme.identity(model))
        self.assertEqual(compressed.parameter_count, model.parameter_count)

    def test_diagonal_truncation(self):
        model = LayeredModel([LayerSpec('w', np.diag([4.0, 3.0, 2.0, 1.0]))])
        layer = apply_scheme(model, (2,)).layer('w')
        self.assertTrue(layer.factored)
        self.assertEqual(layer.pair.u_trunc.shape, (4, 2))
        self.assertEqual(layer.pair.v_star.shape, (2, 4))
        np.testing.assert_allclose(layer.dense(), np.diag([4.0, 3.0, 0.0, 0.0]), atol=1e-12)

    def test_per_layer_oracle(self):
        """Only layers with non-zero ranks change, by the optimal rank-k error"""
        model = LayeredModel([LayerSpec(f"l{i}", self.rng.standard_normal((5, 4))) for i in range(3)])
        compressed = apply_scheme(model, (0, 2, 1))
        self.assertFalse(compressed.layer('l0').factored)
        np.testing.assert_array_equal(compressed.layer('l0').dense(), model.layer('l0').weights)
        for name, k in (('l1', 2), ('l2', 1)):
            original = model.layer(name).weights
            error = np.linalg.norm(original - compressed.layer(name).dense())
            self.assertAlmostEqual(error, truncation_error(svd(original), k), delta=1e-8)

    def test_non_searchable_untouched(self):
        model = LayeredModel([LayerSpec('a', np.eye(3)), LayerSpec('b', np.eye(3), searchable=False)])
        compressed = apply_scheme(model, (1,))
        self.assertTrue(compressed.layer('a').factored)
        self.assertFalse(compressed.layer('b').factored)

    def test_invalid_schemes(self):
        model = LayeredModel([LayerSpec('a', np.eye(3))])
        with self.assertRaises(InvalidRank):
            apply_scheme(model, (4,))
        with self.assertRaises(InvalidRank):
            apply_scheme(model, (1, 1))
        with self.assertRaises(InvalidRank):
            apply_scheme(model, (-1,))

    def test_parameter_count_matches_cost(self):
        """Counting parameters after compression agrees with the speedup cost"""
        for _ in range(200):
            model = random_model(self.rng, int(self.rng.integers(1, 6)), frozen_every=3)
            scheme = random_scheme(self.rng, model)
            compressed = apply_scheme(model, scheme)
            expected = model.parameter_count / compressed.parameter_count
            self.assertAlmostEqual(scheme_speedup(model, scheme), expected, places=12)


class TestSchemeSpeedup(unittest.TestCase):
    """Whole-model speedup"""

    def test_examples(self):
        single = LayeredModel([LayerSpec('a', np.zeros((1024, 1024)))])
        self.assertEqual(scheme_speedup(single, (0,)), 1.0)
        self.assertAlmostEqual(scheme_speedup(single, (256,)), 2.0)
        double = LayeredModel([LayerSpec('a', np.zeros((1024, 1024))), LayerSpec('b', np.zeros((1024, 1024)))])
        self.assertAlmostEqual(scheme_speedup(double, (256, 0)), 4.0 / 3.0)

    def test_monotone_in_rank(self):
        """Lowering a cost-saving rank never lowers the speedup"""
        rng = np.random.default_rng(1)
        for _ in range(50):
            model = random_model(rng, 3, max_dim=20)
            scheme = random_scheme(rng, model)
            for i, layer in enumerate(model.searchable_layers):
                m, n = layer.shape
                k = scheme[i]
                if k > 1 and k * (m + n) < m * n:
                    lowered = list(scheme)
                    lowered[i] = k - 1
                    self.assertGreaterEqual(scheme_speedup(model, lowered), scheme_speedup(model, scheme))


class TestModelFile(unittest.TestCase):
    """LRFM save/load"""

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.path = os.path.join(self.tmpdir, 'model.lrfm')

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def assert_same_model(self, a, b):
        self.assertEqual(a.metadata, b.metadata)
        self.assertEqual([l.name for l in a.layers], [l.name for l in b.layers])
        self.assertEqual([l.searchable for l in a.layers], [l.searchable for l in b.layers])
        for x, y in zip(a.layers, b.layers):
            self.assertEqual(x.weights.tobytes(), y.weights.tobytes())

    def test_single_layer_round_trip(self):
        model = LayeredModel([LayerSpec('only', np.arange(6.0).reshape(2, 3))])
        save_model(model, self.path)
        self.assert_same_model(model, load_model(self.path))

    def test_mixed_round_trip(self):
        model = random_model(np.random.default_rng(2), 18, max_dim=30, frozen_every=4)
        save_model(model, self.path)
        loaded = load_model(self.path)
        self.assert_same_model(model, loaded)
        save_model(loaded, self.path + '2')
        with open(self.path, 'rb') as f1, open(self.path + '2', 'rb') as f2:
            self.assertEqual(f1.read(), f2.read())

    def test_compressed_round_trip(self):
        model = LayeredModel([LayerSpec('a', np.random.default_rng(3).standard_normal((6, 5))),
                              LayerSpec('b', np.eye(4), searchable=False)])
        save_model(apply_scheme(model, (2,)), self.path)
        loaded = load_model(self.path)
        self.assertIsInstance(loaded, CompressedModel)
        self.assertEqual(loaded.scheme.ranks, (2,))
        self.assertEqual(loaded.layer('a').pair.u_trunc.shape, (6, 2))
        np.testing.assert_array_equal(loaded.layer('b').dense(), np.eye(4))

    def test_bad_magic(self):
        save_model(LayeredModel([LayerSpec('a', np.eye(2))]), self.path)
        with open(self.path, 'r+b') as f:
            f.write(b'XXXX')
        with self.assertRaises(FormatError) as ctx:
            load_model(self.path)
        self.assertEqual(ctx.exception.offset, 0)

    def test_truncated(self):
        save_model(LayeredModel([LayerSpec('a', np.eye(2))]), self.path)
        with open(self.path, 'rb') as f:
            data = f.read()
        with open(self.path, 'wb') as f:
            f.write(data[:-10])
        with self.assertRaises(FormatError):
            load_model(self.path)


if __name__ == '__main__':
    unittest.main()
