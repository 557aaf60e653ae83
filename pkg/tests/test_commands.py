"""
End-to-end tests for the command layer on the toy profile
"""

import csv
import json
import os
import shutil
import tempfile
import unittest
from unittest.mock import patch

import ranksight
from core.commands import (cmd_checkpoint_info, cmd_compress, cmd_condense, cmd_eval, cmd_profile, cmd_report,
                           cmd_search, cmd_select, cmd_sweep)
from core.config import build_config
from core.errors import ConfigError
from core.netmodel import apply_scheme, load_model


SHARED = {}


def setUpModule():
    """Build the profile and run one short search for every test in this module"""
    SHARED['tmpdir'] = tempfile.mkdtemp()
    CommandTestCase.tmpdir = SHARED['tmpdir']
    CommandTestCase.out_dir = os.path.join(SHARED['tmpdir'], 'runs')
    with patch('core.commands.print_table'), patch('core.commands.print_success'):
        CommandTestCase.profile = cmd_profile(CommandTestCase.config('profile'))
        CommandTestCase.search = cmd_search(CommandTestCase.config('search'))


def tearDownModule():
    shutil.rmtree(SHARED['tmpdir'])


class CommandTestCase(unittest.TestCase):
    """Base class; the profile and search run are shared across the module"""

    tmpdir = None
    out_dir = None
    profile = None
    search = None

    @classmethod
    def config(cls, mode, **sections):
        document = {
            'mode': mode,
            'paths': {'out_dir': cls.out_dir, 'profile_dir': os.path.join(cls.tmpdir, 'profile')},
            'reward': {'target_speedup': 1.1},
            'controller': {'hidden': 16, 'embed': 16},
            'search': {'max_steps': 30, 'log_every': 10},
        }
        for name, values in sections.items():
            document.setdefault(name, {}).update(values)
        return build_config(document)

    def artifact(self, name):
        return os.path.join(self.out_dir, name)


class TestProfileAndEval(CommandTestCase):

    @patch('core.commands.print_success')
    def test_eval_matches_recorded_test_error(self, mock_print_success):
        """Evaluating the baseline on test reproduces the profile's test error"""
        result = cmd_eval(self.config('eval', eval={'split': 'test'}))
        self.assertEqual(result.aggregate, self.profile.test_error)
        mock_print_success.assert_called_once()

    @patch('core.commands.print_table')
    @patch('core.commands.print_success')
    def test_identity_compress_parity(self, mock_print_success, mock_print_table):
        """An identity scheme leaves the dev error unchanged"""
        cmd_compress(self.config('compress', compress={'scheme': [0] * 6, 'measure_repeats': 1}))
        path = self.artifact('compressed.lrfm')
        self.assertTrue(os.path.exists(path))
        config = self.config('eval', eval={'split': 'dev'}, paths={'model_path': path})
        self.assertEqual(cmd_eval(config).aggregate, self.profile.baseline_error)
        mock_print_table.assert_called()

    @patch('core.commands.print_table')
    @patch('core.commands.print_success')
    def test_compress_with_energy_and_retrain(self, mock_print_success, mock_print_table):
        config = self.config('compress', compress={'energy': 0.7, 'retrain_epochs': 1, 'measure_repeats': 1},
                             paths={'out_dir': os.path.join(self.tmpdir, 'retrain')})
        compressed, history = cmd_compress(config)
        self.assertEqual(len(history), 2)
        loaded = load_model(os.path.join(self.tmpdir, 'retrain', 'compressed.lrfm'))
        self.assertEqual(loaded.parameter_count, compressed.parameter_count)


class TestSweep(CommandTestCase):

    @patch('core.commands.print_table')
    @patch('core.commands.print_success')
    def test_sensitivity_csv(self, mock_print_success, mock_print_table):
        """One row per layer and energy; full energy costs nothing"""
        cmd_sweep(self.config('sweep', sweep={'energies': [0.3, 1.0]}))
        with open(self.artifact('sensitivity.csv'), newline='', encoding='utf-8') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), 12)
        self.assertTrue(all(float(r['delta_vs_baseline']) == 0.0 for r in rows if float(r['energy']) == 1.0))

    @patch('ranksight.print_error')
    def test_unknown_layer_exit_code(self, mock_print_error):
        code = ranksight.run(None, [f"paths.out_dir={json.dumps(self.out_dir)}",
                                    f"paths.profile_dir={json.dumps(os.path.join(self.tmpdir, 'profile'))}",
                                    'sweep.layers=["fc99"]'], 'sweep')
        self.assertEqual(code, 2)
        mock_print_error.assert_called_once()


class TestSearchArtifacts(CommandTestCase):

    def test_artifacts(self):
        for name in ('search.jsonl', 'controller.lrcp', 'explored.json', 'summary.json'):
            self.assertTrue(os.path.exists(self.artifact(name)), name)
        with open(self.artifact('summary.json'), encoding='utf-8') as f:
            summary = json.load(f)
        self.assertEqual(summary['steps'], 30)
        self.assertEqual(set(summary['runtime']), {'total_eval_ms', 'rss_bytes'})
        self.assertNotIn('rss_bytes', summary)

    def test_missing_target(self):
        with self.assertRaises(ConfigError):
            build_config({'mode': 'search'})

    @patch('core.commands.print_table')
    @patch('core.commands.print_info')
    def test_checkpoint_info(self, mock_print_info, mock_print_table):
        params, metadata = cmd_checkpoint_info(self.artifact('controller.lrcp'))
        self.assertEqual(metadata['search_steps'], '30')
        self.assertEqual(params.num_layers, 6)

    @patch('core.commands.print_table')
    @patch('core.commands.print_success')
    def test_report(self, mock_print_success, mock_print_table):
        records, baselines = cmd_report(self.config('report', report={'windows': [[0, 10]],
                                                                      'manual_energies': [0.7]}))
        self.assertEqual(len(records), 30)
        with open(self.artifact('report.csv'), encoding='utf-8') as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], 'step,speedup,error,rejected')
        self.assertEqual(len(lines), 11)
        self.assertEqual([b['kind'] for b in baselines], ['manual', 'guided_manual'])

    @patch('core.commands.print_table')
    @patch('core.commands.print_success')
    def test_select(self, mock_print_success, mock_print_table):
        """Selection reports proxy error, holdout error and speedup for each candidate"""
        first = cmd_select(self.config('select'))
        second = cmd_select(self.config('select'))
        self.assertEqual(first, second)
        self.assertLessEqual(len(first['candidates']), 5)
        for row in first['candidates']:
            self.assertEqual(set(row), {'candidate', 'scheme', 'speedup', 'proxy_error', 'holdout_error'})
        self.assertTrue(os.path.exists(self.artifact('selection.json')))

    @patch('core.commands.print_table')
    @patch('core.commands.print_success')
    def test_select_evaluates_each_candidate_once(self, mock_print_success, mock_print_table):
        with patch('core.search.apply_scheme', wraps=apply_scheme) as mock_apply:
            selection = cmd_select(self.config('select'))
        self.assertEqual(mock_apply.call_count, len(selection['candidates']))


class TestCondense(CommandTestCase):

    @patch('core.commands.print_table')
    @patch('core.commands.print_success')
    def test_manifest_repeatable(self, mock_print_success, mock_print_table):
        config = self.config('condense', condense={'size': 20},
                             paths={'manifest_path': os.path.join(self.tmpdir, 'condensed.json')})
        first = cmd_condense(config)
        second = cmd_condense(config)
        self.assertEqual(first, second)
        self.assertEqual(len(first['selected']), 20)

        proxy = self.config('eval', eval={'split': 'condensed'},
                            paths={'manifest_path': os.path.join(self.tmpdir, 'condensed.json')})
        self.assertIsNotNone(cmd_eval(proxy).aggregate)

    @patch('ranksight.print_error')
    @patch('core.commands.print_table')
    def test_empty_condensed_set(self, mock_print_table, mock_print_error):
        code = ranksight.run(None, [f"paths.out_dir={json.dumps(self.out_dir)}",
                                    f"paths.profile_dir={json.dumps(os.path.join(self.tmpdir, 'profile'))}",
                                    f"paths.manifest_path={json.dumps(os.path.join(self.tmpdir, 'none.json'))}",
                                    'condense.correl_min=1.0'], 'condense')
        self.assertEqual(code, 5)

    def test_condensed_split_needs_manifest(self):
        config = self.config('eval', eval={'split': 'condensed'},
                             paths={'manifest_path': os.path.join(self.tmpdir, 'missing.json')})
        with self.assertRaises(ConfigError):
            cmd_eval(config)


if __name__ == '__main__':
    unittest.main()
