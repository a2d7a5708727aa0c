from rest_framework import serializers

from .exceptions import ConfigurationError
from .harness import ALL_MODELS, PROFILES, RunConfig
from .models import SimulationRun, MetricsRecord
from .trialgen import DgmParams, dgm_from_dict


class SimulationRunSerializer(serializers.ModelSerializer):
    models = serializers.SerializerMethodField()
    scenario_ids = serializers.SerializerMethodField()
    metrics_count = serializers.SerializerMethodField()

    class Meta:
        model = SimulationRun
        fields = [
            'id',
            'profile',
            'seed',
            'n_sims',
            'imputations',
            'models',
            'scenario_ids',
            'out_dir',
            'created_at',
            'finished_at',
            'metrics_count',
        ]
        read_only_fields = fields

    def get_models(self, obj):
        return obj.model_list()

    def get_scenario_ids(self, obj):
        return obj.scenario_list()

    def get_metrics_count(self, obj):
        return obj.metrics.count()


class MetricsRecordSerializer(serializers.ModelSerializer):
    class Meta:
        model = MetricsRecord
        fields = [
            'id',
            'run',
            'scenario_id',
            'model',
            'estimand',
            'n_sims',
            'conv_rate',
            'bias',
            'mcse_bias',
            'mean_halfwidth',
            'halfwidth_change_vs_full',
            'coverage',
            'mcse_coverage',
        ]
        read_only_fields = fields


class DgmParamsSerializer(serializers.Serializer):
    """Partial override of the data-generating parameters; omitted fields keep their defaults."""
    mu_control = serializers.ListField(child=serializers.FloatField(), min_length=4, max_length=4, required=False)
    delta = serializers.ListField(child=serializers.FloatField(), min_length=4, max_length=4, required=False)
    sigma = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(), min_length=4, max_length=4),
        min_length=4, max_length=4, required=False,
    )
    theta_on = serializers.FloatField(min_value=0.0, required=False)
    theta_off = serializers.FloatField(min_value=0.0, required=False)
    n_per_arm = serializers.IntegerField(min_value=1, required=False)

    def validate(self, attrs):
        try:
            attrs['params'] = dgm_from_dict(attrs)
        except ConfigurationError as exc:
            raise serializers.ValidationError(str(exc))
        return attrs


class ScenarioOverrideSerializer(serializers.Serializer):
    """The JSON document accepted by ``--overrides``."""
    dgm = DgmParamsSerializer(required=False)
    retain_off_treatment = serializers.BooleanField(required=False, default=True)
    timepoint = serializers.IntegerField(min_value=1, max_value=3, required=False)

    def to_overrides(self):
        data = self.validated_data
        overrides = {'retain_off_treatment': data['retain_off_treatment']}
        overrides['dgm'] = data['dgm']['params'] if 'dgm' in data else DgmParams()
        if 'timepoint' in data:
            overrides['timepoint'] = data['timepoint']
        return overrides


class RunConfigSerializer(serializers.Serializer):
    """Validates command-line/JSON run settings; every field is optional and falls back to the profile."""
    profile = serializers.ChoiceField(choices=sorted(PROFILES), required=False, allow_null=True)
    scenarios = serializers.ListField(
        child=serializers.IntegerField(min_value=1, max_value=72), allow_empty=False,
        required=False, allow_null=True,
    )
    n_sims = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    models = serializers.ListField(
        child=serializers.ChoiceField(choices=ALL_MODELS), allow_empty=False,
        required=False, allow_null=True,
    )
    imputations = serializers.IntegerField(min_value=2, required=False, allow_null=True)
    seed = serializers.IntegerField(min_value=0, required=False, allow_null=True)
    threads = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    out_dir = serializers.CharField(required=False, allow_null=True)

    def to_config(self, defaults=None, overrides=None):
        data = dict(self.validated_data)
        profile = data.pop('profile', None) or 'desk'
        if data.get('scenarios') is not None:
            data['scenarios'] = tuple(data['scenarios'])
        if data.get('models') is not None:
            data['models'] = tuple(data['models'])
        data.update(overrides or {})
        return RunConfig.from_profile(profile, defaults=defaults, **data)


class TheorySerializer(serializers.Serializer):
    """
    Either explicit counts (n1 on treatment, n2 retrieved off treatment,
    n3 missing) with optional expected changes mu1/mu2 in mL, or arm
    discontinuation rates with a withdrawal fraction.
    """
    n1 = serializers.FloatField(min_value=0.0, required=False)
    n2 = serializers.FloatField(min_value=0.0, required=False)
    n3 = serializers.FloatField(min_value=0.0, required=False)
    mu1 = serializers.FloatField(required=False)
    mu2 = serializers.FloatField(required=False)
    disc_rate_control = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    disc_rate_active = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    withdrawal = serializers.FloatField(min_value=0.0, max_value=1.0, required=False, default=0.5)

    def validate(self, attrs):
        counts = [k for k in ('n1', 'n2', 'n3') if k in attrs]
        rates = [k for k in ('disc_rate_control', 'disc_rate_active') if k in attrs]
        means = [k for k in ('mu1', 'mu2') if k in attrs]
        if counts and len(counts) != 3:
            raise serializers.ValidationError("n1, n2 and n3 must be given together")
        if rates and len(rates) != 2:
            raise serializers.ValidationError("disc_rate_control and disc_rate_active must be given together")
        if means and len(means) != 2:
            raise serializers.ValidationError("mu1 and mu2 must be given together")
        if means and not counts:
            raise serializers.ValidationError("mu1/mu2 need the counts n1, n2, n3")
        if not counts and not rates:
            raise serializers.ValidationError("give either n1/n2/n3 or the two discontinuation rates")
        return attrs
