from django.core.management.base import BaseCommand

from ...theory import inflation_table, scenario_bias
from ...trialgen import get_scenario
from ._options import config_error, parse_scenarios


class Command(BaseCommand):
    help = "Print closed-form variance inflation per discontinuation setting and common-MAR bias per scenario."

    def add_arguments(self, parser):
        parser.add_argument('--scenarios', default='desk', help="desk, all, or ids/ranges e.g. 1,5-8,41")
        parser.add_argument('--withdrawal', type=float, default=0.5, help="fraction of discontinuers withdrawn")

    def handle(self, *args, **options):
        withdrawal = options['withdrawal']
        if not 0.0 <= withdrawal <= 1.0:
            raise config_error("--withdrawal must lie in [0, 1]")
        ids = parse_scenarios(options['scenarios'])
        if any(not 1 <= s <= 72 for s in ids):
            raise config_error("scenario ids must lie in 1..72")

        self.stdout.write(f"Variance inflation (withdrawal fraction {withdrawal:g})")
        self.stdout.write("  control  active  control_infl  active_infl  effect_infl  halfwidth_bound")
        for row in inflation_table(withdrawal):
            self.stdout.write(
                f"  {row['disc_rate_control']:7.0%}  {row['disc_rate_active']:6.0%}"
                f"  {row['inflation_control']:12.4f}  {row['inflation_active']:11.4f}"
                f"  {row['inflation_effect']:11.4f}  {row['halfwidth_bound_pct']:14.2f}%"
            )

        self.stdout.write("")
        self.stdout.write("Common-MAR bias (mL)")
        for scenario_id in ids:
            scenario = get_scenario(scenario_id)
            control, active, effect = scenario_bias(scenario, withdrawal)
            self.stdout.write(
                f"  {scenario}: control {control:+.2f}  active {active:+.2f}  effect {effect:+.2f}"
            )
        self.stdout.write(self.style.SUCCESS(f"{len(ids)} scenario(s)"))
