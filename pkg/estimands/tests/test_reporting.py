import math
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from estimands.exceptions import EmptyReport, ReportIOError
from estimands.harness import MetricsRow
from estimands.reporting import (
    METRICS_FILE,
    heatmap_tables,
    read_metrics,
    render_heatmap,
    report,
    trajectory_of,
    write_metrics,
)
from estimands.trialgen import Trajectory


def sample_rows(scenarios=(1, 18, 41), models=("FULL", "MMRM", "PICS")):
    rows = []
    for s in scenarios:
        for i, model in enumerate(models):
            for estimand in ("effect", "mean_control", "mean_active"):
                rows.append(MetricsRow(
                    scenario_id=s, model=model, estimand=estimand, n_sims=250,
                    conv_rate=1.0 if model != "PICS" else 0.996,
                    bias=0.1 * s - i / 3.0,
                    mcse_bias=3.4,
                    mean_halfwidth=120.0 + i,
                    halfwidth_change_vs_full=0.0 if model == "FULL" else 100.0 * i / 120.0,
                    coverage=0.948,
                    mcse_coverage=math.sqrt(0.948 * 0.052 / 250),
                ))
    return rows


class MetricsCsvTests(SimpleTestCase):

    def test_round_trip_is_exact(self):
        rows = sample_rows()
        rows[0].bias = float("nan")
        with tempfile.TemporaryDirectory() as tmp:
            path = write_metrics(rows, Path(tmp) / METRICS_FILE)
            back = read_metrics(path)
            raw = path.read_bytes()
        self.assertTrue(math.isnan(back[0].bias))
        back[0].bias = rows[0].bias = 0.0
        self.assertEqual(back, rows)
        self.assertTrue(raw.startswith(b"scenario_id,model,estimand,n_sims,conv_rate,bias,"))
        self.assertIn(b"\r\n", raw)

    def test_empty_rows(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(EmptyReport):
                write_metrics([], Path(tmp) / METRICS_FILE)

    def test_unwritable_path(self):
        with tempfile.TemporaryDirectory() as tmp:
            target = Path(tmp) / "missing" / METRICS_FILE
            with self.assertRaises(ReportIOError) as ctx:
                write_metrics(sample_rows(), target)
        self.assertEqual(ctx.exception.path, target)

    def test_missing_file(self):
        with self.assertRaises(ReportIOError):
            read_metrics("/nonexistent/dir/metrics.csv")


class HeatmapTests(SimpleTestCase):

    def test_trajectory_split(self):
        self.assertEqual(trajectory_of(36), Trajectory.RETURN_TO_BASELINE)
        self.assertEqual(trajectory_of(37), Trajectory.SAME_AS_ACTIVE)

    def test_tables(self):
        tables = heatmap_tables(sample_rows())
        self.assertEqual(set(tables), {Trajectory.RETURN_TO_BASELINE, Trajectory.SAME_AS_ACTIVE})
        bias = tables[Trajectory.RETURN_TO_BASELINE]["bias"]
        self.assertEqual(list(bias.index), [1, 18])
        self.assertEqual(list(bias.columns), ["FULL", "MMRM", "PICS"])

    def test_unknown_estimand(self):
        with self.assertRaises(EmptyReport):
            heatmap_tables(sample_rows(), estimand="odds_ratio")

    def test_cell_count(self):
        tables = heatmap_tables(sample_rows())
        with tempfile.TemporaryDirectory() as tmp:
            cells = render_heatmap(tables[Trajectory.RETURN_TO_BASELINE], Path(tmp) / "h.svg", "RTB")
            self.assertTrue((Path(tmp) / "h.svg").read_text().lstrip().startswith("<?xml"))
        self.assertEqual(cells, 2 * 3 * 3)

    def test_report_writes_all_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = report(sample_rows(), Path(tmp) / "out")
            names = sorted(p.name for p in paths)
            self.assertTrue(all(p.exists() for p in paths))
        self.assertEqual(names, ["heatmap_RTB.svg", "heatmap_SAA.svg", METRICS_FILE])
