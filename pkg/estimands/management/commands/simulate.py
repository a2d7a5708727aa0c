from pathlib import Path

import pandas as pd
from django.core.management.base import BaseCommand

from ...trialgen import generate_trial
from ._options import add_run_arguments, build_config, io_error


class Command(BaseCommand):
    help = "Generate trial datasets and write one CSV per scenario (all replicates stacked)."

    def add_arguments(self, parser):
        add_run_arguments(parser)

    def handle(self, *args, **options):
        cfg = build_config(options)
        out = Path(cfg.out_dir) / 'datasets'
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise io_error(f"{out}: {exc.strerror or exc}")

        for scenario in cfg.scenario_list():
            frames = [generate_trial(scenario, r, cfg.seed).to_frame() for r in range(1, cfg.n_sims + 1)]
            path = out / f"scenario_{scenario.scenario_id:02d}.csv"
            try:
                pd.concat(frames, ignore_index=True).to_csv(path, index=False, na_rep="")
            except OSError as exc:
                raise io_error(f"{path}: {exc.strerror or exc}")
            self.stdout.write(f"{scenario}: {cfg.n_sims} replicate(s) -> {path}")

        self.stdout.write(self.style.SUCCESS(f"Wrote {len(cfg.scenarios)} dataset file(s) to {out}"))
