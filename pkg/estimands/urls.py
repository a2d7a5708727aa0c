from django.urls import path, include
from rest_framework.routers import DefaultRouter
from .views import (
    SimulationRunViewSet, MetricsRecordViewSet, ExportRunCsvView, ScenarioListView, TheoryView,
)

router = DefaultRouter()
router.register(r'runs', SimulationRunViewSet, basename='runs')
router.register(r'metrics', MetricsRecordViewSet, basename='metrics')

urlpatterns = [
    # Router URLs
    path("", include(router.urls)),

    # GET /api/runs/{id}/export/csv/ -> ExportRunCsvView
    path("runs/<int:pk>/export/csv/", ExportRunCsvView.as_view(), name="export_run_csv"),
    # GET /api/scenarios/ -> ScenarioListView
    path("scenarios/", ScenarioListView.as_view(), name="scenarios"),
    # POST /api/theory/ -> TheoryView
    path("theory/", TheoryView.as_view(), name="theory"),
]
