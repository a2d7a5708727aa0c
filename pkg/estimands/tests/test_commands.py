import json
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from estimands.exceptions import ReportIOError
from estimands.management.commands._options import parse_models, parse_scenarios
from estimands.models import MetricsRecord, SimulationRun
from estimands.reporting import METRICS_FILE, read_metrics


class OptionParsingTests(SimpleTestCase):

    def test_scenario_selectors(self):
        self.assertEqual(parse_scenarios('1,5-7,41'), [1, 5, 6, 7, 41])
        self.assertEqual(len(parse_scenarios('all')), 72)
        self.assertEqual(parse_scenarios('desk')[:3], [1, 8, 11])
        self.assertIsNone(parse_scenarios(None))

    def test_bad_selector(self):
        for text in ('x', '9-3', ','):
            with self.assertRaises(CommandError) as ctx:
                parse_scenarios(text)
            self.assertEqual(ctx.exception.returncode, 2)

    def test_models(self):
        self.assertEqual(parse_models('pics-r, mmrm'), ['PICS_R', 'MMRM'])


class RunCommandTests(TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name) / 'results'

    def tearDown(self):
        self.tmp.cleanup()

    def call(self, *args):
        stdout = StringIO()
        call_command(*args, stdout=stdout)
        return stdout.getvalue()

    def test_run_and_store(self):
        output = self.call(
            'run', '--scenarios', '1', '--sims', '1', '--models', 'CICS',
            '--imputations', '2', '--seed', '5', '--out', str(self.out), '--store',
        )
        self.assertTrue((self.out / METRICS_FILE).exists())
        self.assertTrue((self.out / 'heatmap_RTB.svg').exists())
        self.assertFalse((self.out / 'heatmap_SAA.svg').exists())
        self.assertIn('Stored as run', output)

        run = SimulationRun.objects.get()
        self.assertEqual(run.model_list(), ['FULL', 'CICS'])
        self.assertEqual(run.profile, settings.TRIALSIM['PROFILE'])
        self.assertIsNotNone(run.finished_at)
        self.assertEqual(MetricsRecord.objects.filter(run=run).count(), 2 * 3)

        rows = read_metrics(self.out / METRICS_FILE)
        self.assertEqual({r.model for r in rows}, {'FULL', 'CICS'})

        # report re-renders from the file just written
        output = self.call('report', '--out', str(self.out), '--estimand', 'mean_active')
        self.assertIn('Rendered 6 row(s)', output)

    def test_failed_report_stores_nothing(self):
        with mock.patch('estimands.management.commands.run.report', side_effect=ReportIOError(self.out, 'disk full')):
            with self.assertRaises(CommandError) as ctx:
                self.call(
                    'run', '--scenarios', '1', '--sims', '1', '--models', 'CICS',
                    '--imputations', '2', '--out', str(self.out), '--store',
                )
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertFalse(SimulationRun.objects.exists())

    def test_explicit_profile_is_recorded(self):
        self.call(
            'run', '--profile', 'full', '--scenarios', '41', '--sims', '1', '--models', 'CICS',
            '--imputations', '2', '--out', str(self.out), '--store',
        )
        self.assertEqual(SimulationRun.objects.get().profile, 'full')

    def test_simulate(self):
        self.call('simulate', '--scenarios', '18', '--sims', '2', '--out', str(self.out))
        path = self.out / 'datasets' / 'scenario_18.csv'
        lines = path.read_text().splitlines()
        self.assertEqual(len(lines), 1 + 2 * 750)

    def test_config_errors(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('run', '--scenarios', 'abc', '--out', str(self.out))
        self.assertEqual(ctx.exception.returncode, 2)

        with self.assertRaises(CommandError) as ctx:
            self.call('run', '--scenarios', '1', '--models', 'NOPE', '--out', str(self.out))
        self.assertEqual(ctx.exception.returncode, 2)

        with self.assertRaises(CommandError) as ctx:
            self.call('run', '--scenarios', '99', '--out', str(self.out))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_bad_overrides(self):
        path = Path(self.tmp.name) / 'overrides.json'
        path.write_text(json.dumps({'dgm': {'n_per_arm': 0}}))
        with self.assertRaises(CommandError) as ctx:
            self.call('simulate', '--scenarios', '1', '--sims', '1', '--overrides', str(path), '--out', str(self.out))
        self.assertEqual(ctx.exception.returncode, 2)

        path.write_text('{not json')
        with self.assertRaises(CommandError) as ctx:
            self.call('simulate', '--scenarios', '1', '--overrides', str(path), '--out', str(self.out))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_overrides_applied(self):
        path = Path(self.tmp.name) / 'overrides.json'
        path.write_text(json.dumps({'dgm': {'n_per_arm': 20}}))
        self.call('simulate', '--scenarios', '1', '--sims', '1', '--overrides', str(path), '--out', str(self.out))
        lines = (self.out / 'datasets' / 'scenario_01.csv').read_text().splitlines()
        self.assertEqual(len(lines), 1 + 40)

    def test_missing_metrics_file(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('report', '--metrics', str(Path(self.tmp.name) / 'none.csv'), '--out', str(self.out))
        self.assertEqual(ctx.exception.returncode, 3)

    def test_missing_overrides_file(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('simulate', '--overrides', str(Path(self.tmp.name) / 'none.json'), '--out', str(self.out))
        self.assertEqual(ctx.exception.returncode, 3)

    def test_theory(self):
        output = self.call('theory', '--scenarios', '18,41')
        self.assertIn('Variance inflation', output)
        self.assertIn('0.1500', output)
        self.assertIn('2 scenario(s)', output)

        with self.assertRaises(CommandError) as ctx:
            self.call('theory', '--withdrawal', '1.5')
        self.assertEqual(ctx.exception.returncode, 2)
