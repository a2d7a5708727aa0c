from django.http import HttpResponse, JsonResponse

from rest_framework import viewsets, status, renderers
from rest_framework.permissions import AllowAny
from rest_framework.views import APIView
from rest_framework.response import Response

from .exceptions import DivisionByZero, EmptyReport
from .models import SimulationRun, MetricsRecord
from .reporting import METRICS_FILE, metrics_frame
from .serializers import SimulationRunSerializer, MetricsRecordSerializer, TheorySerializer
from .theory import (
    arm_var_inflation, common_mar_bias, effect_var_inflation, halfwidth_bound,
    scenario_bias, theory_var_inflation,
)
from .trialgen import DESK_SCENARIO_IDS, scenario_grid, true_estimand


# Minimal CSV renderer to satisfy content negotiation for CSV endpoint
class PassthroughCSVRenderer(renderers.BaseRenderer):
    media_type = 'text/csv'
    format = 'csv'
    charset = 'utf-8'

    def render(self, data, media_type=None, renderer_context=None):
        return data


class SimulationRunViewSet(viewsets.ReadOnlyModelViewSet):
    """
    Stored grid runs.
    GET /api/runs/ - List runs (most recent first)
    GET /api/runs/{id}/ - One run
    """
    queryset = SimulationRun.objects.all()
    serializer_class = SimulationRunSerializer
    permission_classes = [AllowAny]


class MetricsRecordViewSet(viewsets.ReadOnlyModelViewSet):
    """
    GET /api/metrics/ - Stored metrics rows
    Query params (all optional): ?run=ID&model=PICS&estimand=effect&scenario=18
    """
    queryset = MetricsRecord.objects.all()
    serializer_class = MetricsRecordSerializer
    permission_classes = [AllowAny]

    def get_queryset(self):
        queryset = super().get_queryset()
        params = self.request.query_params

        run = params.get('run')
        if run:
            queryset = queryset.filter(run_id=run)
        model = params.get('model')
        if model:
            queryset = queryset.filter(model=model)
        estimand = params.get('estimand')
        if estimand:
            queryset = queryset.filter(estimand=estimand)
        scenario = params.get('scenario')
        if scenario:
            queryset = queryset.filter(scenario_id=scenario)
        return queryset

    def list(self, request, *args, **kwargs):
        for key in ('run', 'scenario'):
            value = request.query_params.get(key)
            if value and not value.isdigit():
                return Response({"error": f"{key} must be an integer"}, status=status.HTTP_400_BAD_REQUEST)
        return super().list(request, *args, **kwargs)


class ExportRunCsvView(APIView):
    """
    GET /api/runs/{id}/export/csv/
    The run's metrics as a metrics.csv download.
    """
    permission_classes = [AllowAny]
    renderer_classes = [PassthroughCSVRenderer]

    def get(self, request, pk, *args, **kwargs):
        try:
            run = SimulationRun.objects.get(pk=pk)
        except SimulationRun.DoesNotExist:
            return JsonResponse({"error": "Run not found"}, status=status.HTTP_404_NOT_FOUND)

        try:
            frame = metrics_frame([record.to_row() for record in run.metrics.all()])
        except EmptyReport:
            return JsonResponse({"error": "Run has no metrics"}, status=status.HTTP_404_NOT_FOUND)

        response = HttpResponse(content_type='text/csv')
        response['Content-Disposition'] = f'attachment; filename="run_{run.pk}_{METRICS_FILE}"'
        frame.to_csv(response, index=False, lineterminator="\r\n")
        return response


class ScenarioListView(APIView):
    """
    GET /api/scenarios/ - The 72 grid cells with true estimands (mL) at the final timepoint
    GET /api/scenarios/?desk=true - Only the desk subset
    """
    permission_classes = [AllowAny]

    def get(self, request, *args, **kwargs):
        desk = request.query_params.get('desk', '').lower() == 'true'
        data = []
        for scenario in scenario_grid():
            if desk and scenario.scenario_id not in DESK_SCENARIO_IDS:
                continue
            row = scenario.to_dict()
            row.pop('dgm')
            control, active, effect = true_estimand(scenario)
            row['label'] = scenario.label
            row['truth'] = {'mean_control': control, 'mean_active': active, 'effect': effect}
            row['common_mar_bias'] = dict(zip(('mean_control', 'mean_active', 'effect'), scenario_bias(scenario)))
            data.append(row)
        return Response(data)


class TheoryView(APIView):
    """
    POST /api/theory/
    Closed-form calculators. Body: {"n1", "n2", "n3"[, "mu1", "mu2"]} and/or
    {"disc_rate_control", "disc_rate_active"[, "withdrawal"]}.
    """
    permission_classes = [AllowAny]

    def post(self, request, *args, **kwargs):
        serializer = TheorySerializer(data=request.data)
        if not serializer.is_valid():
            return Response({"error": serializer.errors}, status=status.HTTP_400_BAD_REQUEST)
        data = serializer.validated_data

        result = {}
        try:
            if 'n1' in data:
                result['var_inflation'] = theory_var_inflation(data['n1'], data['n2'], data['n3'])
                if 'mu1' in data:
                    result['bias'] = common_mar_bias(data['n1'], data['n2'], data['n3'], data['mu1'], data['mu2'])
            if 'disc_rate_control' in data:
                w = data['withdrawal']
                inflation = effect_var_inflation(data['disc_rate_control'], data['disc_rate_active'], w)
                result['inflation_control'] = arm_var_inflation(data['disc_rate_control'], w)
                result['inflation_active'] = arm_var_inflation(data['disc_rate_active'], w)
                result['inflation_effect'] = inflation
                result['halfwidth_bound_pct'] = halfwidth_bound(inflation)
        except DivisionByZero as exc:
            return Response({"error": str(exc)}, status=status.HTTP_400_BAD_REQUEST)
        return Response(result)
