from django.contrib import admin

from .models import SimulationRun, MetricsRecord


class MetricsRecordInline(admin.TabularInline):
    model = MetricsRecord
    extra = 0
    can_delete = False
    fields = ('scenario_id', 'model', 'estimand', 'conv_rate', 'bias', 'mean_halfwidth', 'coverage')
    readonly_fields = fields


@admin.register(SimulationRun)
class SimulationRunAdmin(admin.ModelAdmin):

    # Columns visible in the admin list view
    list_display = (
        'id',
        'profile',
        'seed',
        'n_sims',
        'imputations',
        'models',
        'created_at',
        'finished_at',
        'metrics_count',
    )

    list_filter = ('profile',)

    readonly_fields = ('created_at', 'finished_at')

    inlines = [MetricsRecordInline]

    def metrics_count(self, obj):
        return obj.metrics.count()

    metrics_count.short_description = 'Rows'


@admin.register(MetricsRecord)
class MetricsRecordAdmin(admin.ModelAdmin):
    list_display = (
        'id',
        'run',
        'scenario_id',
        'model',
        'estimand',
        'conv_rate',
        'bias',
        'mcse_bias',
        'mean_halfwidth',
        'halfwidth_change_vs_full',
        'coverage',
    )

    search_fields = ('model',)

    # Sidebar filters
    list_filter = (
        'model',
        'estimand',
        'scenario_id',
    )
