from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand

from ...analyze import ESTIMANDS
from ...exceptions import EmptyReport, ReportIOError
from ...reporting import METRICS_FILE, read_metrics, report
from ._options import config_error, io_error


class Command(BaseCommand):
    help = "Re-render metrics.csv and the heatmaps from an existing metrics.csv."

    def add_arguments(self, parser):
        parser.add_argument('--metrics', help="metrics.csv to read (default: <out>/metrics.csv)")
        parser.add_argument('--out', help="output directory")
        parser.add_argument('--estimand', choices=ESTIMANDS, default='effect')

    def handle(self, *args, **options):
        out = Path(options.get('out') or settings.TRIALSIM['OUT_DIR'])
        source = Path(options.get('metrics') or out / METRICS_FILE)
        try:
            rows = read_metrics(source)
            paths = report(rows, out, estimand=options['estimand'])
        except ReportIOError as exc:
            raise io_error(str(exc))
        except EmptyReport as exc:
            raise config_error(str(exc))

        for path in paths:
            self.stdout.write(f"  {path}")
        self.stdout.write(self.style.SUCCESS(f"Rendered {len(rows)} row(s) from {source}"))
