import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='SimulationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('profile', models.CharField(choices=[('desk', 'Desk'), ('full', 'Full'), ('custom', 'Custom')], default='desk', max_length=10)),
                ('seed', models.BigIntegerField()),
                ('n_sims', models.PositiveIntegerField()),
                ('imputations', models.PositiveSmallIntegerField()),
                ('models', models.CharField(help_text='Comma-separated model names', max_length=200)),
                ('scenario_ids', models.TextField(help_text='Comma-separated scenario ids')),
                ('out_dir', models.CharField(blank=True, max_length=500)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='MetricsRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('scenario_id', models.PositiveSmallIntegerField()),
                ('model', models.CharField(max_length=10)),
                ('estimand', models.CharField(choices=[('effect', 'Treatment effect'), ('mean_control', 'Mean change, control'), ('mean_active', 'Mean change, active')], max_length=20)),
                ('n_sims', models.PositiveIntegerField()),
                ('conv_rate', models.FloatField()),
                ('bias', models.FloatField(null=True)),
                ('mcse_bias', models.FloatField(null=True)),
                ('mean_halfwidth', models.FloatField(null=True)),
                ('halfwidth_change_vs_full', models.FloatField(null=True)),
                ('coverage', models.FloatField(null=True)),
                ('mcse_coverage', models.FloatField(null=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='metrics', to='estimands.simulationrun')),
            ],
            options={
                'ordering': ['run', 'scenario_id', 'model', 'estimand'],
                'constraints': [models.UniqueConstraint(fields=('run', 'scenario_id', 'model', 'estimand'), name='unique_metrics_cell')],
            },
        ),
    ]
