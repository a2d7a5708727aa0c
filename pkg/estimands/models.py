from django.db import models
from django.db import models as db_models

from .harness import MetricsRow


class SimulationRun(models.Model):
    PROFILE_CHOICES = [
        ('desk', 'Desk'),
        ('full', 'Full'),
        ('custom', 'Custom'),
    ]

    profile = models.CharField(max_length=10, choices=PROFILE_CHOICES, default='desk')
    seed = models.BigIntegerField()
    n_sims = models.PositiveIntegerField()
    imputations = models.PositiveSmallIntegerField()
    models = models.CharField(max_length=200, help_text="Comma-separated model names")
    scenario_ids = db_models.TextField(help_text="Comma-separated scenario ids")
    out_dir = db_models.CharField(max_length=500, blank=True)

    created_at = db_models.DateTimeField(auto_now_add=True)
    finished_at = db_models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-created_at']

    def model_list(self):
        return [m for m in self.models.split(',') if m]

    def scenario_list(self):
        return [int(s) for s in self.scenario_ids.split(',') if s]

    def __str__(self):
        return f"Run {self.pk} ({self.profile}, {self.n_sims} sims, seed {self.seed})"


class MetricsRecord(models.Model):
    ESTIMAND_CHOICES = [
        ('effect', 'Treatment effect'),
        ('mean_control', 'Mean change, control'),
        ('mean_active', 'Mean change, active'),
    ]

    run = models.ForeignKey(SimulationRun, on_delete=models.CASCADE, related_name='metrics')
    scenario_id = models.PositiveSmallIntegerField()
    model = models.CharField(max_length=10)
    estimand = models.CharField(max_length=20, choices=ESTIMAND_CHOICES)
    n_sims = models.PositiveIntegerField()
    conv_rate = models.FloatField()
    # NULL where no replicate converged
    bias = models.FloatField(null=True)
    mcse_bias = models.FloatField(null=True)
    mean_halfwidth = models.FloatField(null=True)
    halfwidth_change_vs_full = models.FloatField(null=True)
    coverage = models.FloatField(null=True)
    mcse_coverage = models.FloatField(null=True)

    class Meta:
        ordering = ['run', 'scenario_id', 'model', 'estimand']
        constraints = [
            models.UniqueConstraint(fields=['run', 'scenario_id', 'model', 'estimand'], name='unique_metrics_cell'),
        ]

    @classmethod
    def from_row(cls, run, row):
        values = {}
        for name in MetricsRow.field_names():
            value = getattr(row, name)
            if isinstance(value, float) and value != value:
                value = None
            values[name] = value
        return cls(run=run, **values)

    def to_row(self):
        return MetricsRow(**{
            name: float('nan') if getattr(self, name) is None else getattr(self, name)
            for name in MetricsRow.field_names()
        })

    def __str__(self):
        return f"#{self.scenario_id} {self.model} {self.estimand}"
