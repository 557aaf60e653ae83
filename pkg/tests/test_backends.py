"""
Unit tests for the evaluator backends
"""

import os
import sys
import unittest
from unittest.mock import MagicMock, patch

import numpy as np

from backends.external_backend import ExternalEvaluator, _parse_response, external_evaluate
from backends.toy_backend import ToyEvaluator
from core.errors import ConfigError, EvalTimeout, ProtocolError
from core.evaluator import Dataset, get_evaluator
from core.netmodel import LayeredModel, LayerSpec

ENDPOINT = [sys.executable, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures', 'mock_endpoint.py')]


def tiny_model():
    return LayeredModel([LayerSpec('fc1', np.eye(2)), LayerSpec('fc1.bias', np.zeros((1, 2)), False)])


def tiny_dataset(split='dev'):
    features = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [0.0, 3.0]])
    labels = np.array([0, 1, 1, 1])
    return Dataset(split, features, labels, np.ones(4), np.arange(4), np.zeros(4, dtype=bool))


class TestToyEvaluator(unittest.TestCase):
    """In-process backend"""

    def test_evaluate(self):
        evaluator = ToyEvaluator(tiny_dataset(), with_per_sample=True)
        result = evaluator.evaluate(tiny_model())
        self.assertEqual(result.aggregate, 25.0)
        np.testing.assert_array_equal(result.per_sample, [0.0, 0.0, 100.0, 0.0])
        self.assertEqual(evaluator.split, 'dev')
        self.assertEqual(evaluator.sample_count, 4)
        self.assertTrue(evaluator.is_available())


class TestExternalEvaluate(unittest.TestCase):
    """Subprocess protocol"""

    def test_echo(self):
        result = external_evaluate(ENDPOINT + ['echo', '42.0'], '/tmp/none.lrfm', 'dev')
        self.assertEqual(result.aggregate, 42.0)
        self.assertIsNone(result.per_sample)
        self.assertEqual(result.wall_ms, 3.0)

    def test_nonzero_exit(self):
        with self.assertRaises(ProtocolError) as ctx:
            external_evaluate(ENDPOINT + ['fail'], '/tmp/none.lrfm', 'dev')
        self.assertIn('status 7', str(ctx.exception))
        self.assertIn('cannot open', str(ctx.exception))

    def test_wrong_length(self):
        with self.assertRaises(ProtocolError):
            external_evaluate(ENDPOINT + ['per-sample', '3'], '/tmp/none.lrfm', 'dev', per_sample=True,
                              expected_samples=4)

    def test_per_sample(self):
        result = external_evaluate(ENDPOINT + ['per-sample', '4'], '/tmp/none.lrfm', 'dev', per_sample=True,
                                   expected_samples=4)
        np.testing.assert_array_equal(result.per_sample, [100.0, 0.0, 0.0, 0.0])

    def test_garbage(self):
        with self.assertRaises(ProtocolError):
            external_evaluate(ENDPOINT + ['garbage'], '/tmp/none.lrfm', 'dev')

    def test_timeout(self):
        with self.assertRaises(EvalTimeout):
            external_evaluate(ENDPOINT + ['sleep', '30'], '/tmp/none.lrfm', 'dev', timeout=1.0)

    def test_missing_command(self):
        with self.assertRaises(ProtocolError):
            external_evaluate(['/nonexistent/evaluator'], '/tmp/none.lrfm', 'dev')


class TestParseResponse(unittest.TestCase):
    """Response validation"""

    def test_error_range(self):
        with self.assertRaises(ProtocolError):
            _parse_response('{"error": 140.0}', None, False)
        with self.assertRaises(ProtocolError):
            _parse_response('{"error": true}', None, False)

    def test_requested_per_sample_missing(self):
        with self.assertRaises(ProtocolError):
            _parse_response('{"error": 4.0}', 2, True)

    def test_last_line_wins(self):
        result = _parse_response('loading model\n{"error": 4.0, "wall_ms": 2}\n', None, False)
        self.assertEqual(result.aggregate, 4.0)


class TestExternalEvaluator(unittest.TestCase):
    """File hand-off"""

    @patch('backends.external_backend.external_evaluate')
    def test_temp_file_removed(self, mock_evaluate):
        """The model file exists during the call and is removed afterwards"""
        seen = {}

        def fake(command, path, dataset_id, per_sample, timeout, expected):
            seen['path'] = path
            seen['existed'] = os.path.exists(path)
            return MagicMock(aggregate=1.0)

        mock_evaluate.side_effect = fake
        ExternalEvaluator(ENDPOINT, 'dev', expected_samples=4).evaluate(tiny_model())
        self.assertTrue(seen['existed'])
        self.assertFalse(os.path.exists(seen['path']))

    def test_round_trip_through_child(self):
        result = ExternalEvaluator(ENDPOINT + ['echo', '12.5'], 'dev').evaluate(tiny_model())
        self.assertEqual(result.aggregate, 12.5)


class TestGetEvaluator(unittest.TestCase):
    """Backend selection"""

    def test_kinds(self):
        dataset = tiny_dataset()
        self.assertIsInstance(get_evaluator('toy', dataset), ToyEvaluator)
        external = get_evaluator('external', dataset, command=ENDPOINT, timeout=5)
        self.assertIsInstance(external, ExternalEvaluator)
        self.assertEqual(external.expected_samples, 4)

    def test_errors(self):
        with self.assertRaises(ConfigError):
            get_evaluator('external', tiny_dataset())
        with self.assertRaises(ConfigError):
            get_evaluator('cloud', tiny_dataset())

    def test_plugin_kind(self):
        manager = MagicMock()
        get_evaluator('plugin:noisy_split', tiny_dataset(), True, plugin_manager=manager)
        manager.create_evaluator.assert_called_once()
        self.assertEqual(manager.create_evaluator.call_args[0][0], 'noisy_split')


if __name__ == '__main__':
    unittest.main()
