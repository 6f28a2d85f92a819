from rest_framework import serializers

from TreeWalks.services.tree_model import (
    KERNEL_UNIFORM,
    KIND_HOMOGENEOUS,
    VALID_KERNELS,
    VALID_KINDS,
    TreeAddressError,
    TreeSpecError,
    parse_probability,
    parse_word,
)


IDENTITY_CHECKS = (
    'multiplicative_triples',
    'analytic_oracle',
    'solver_certification',
    'green_diagonal',
    'green_upper_bound',
    'h_transform',
    'martin_root',
    'restriction_monotonicity',
    'neumann_oracle',
    'sphere_exit_mass',
    'ratio_limit',
    'bracket_soundness',
    'kernel_structure',
    'boundary_sectors',
)

LEMMA_CHECKS = ('conditioned_hitting', 'occupation', 'tube_lower_bound', 'tube_survival', 'martingale_identity')

SIMULATION_MODES = ('plain', 'conditioned')


class ProbabilityField(serializers.Field):
    default_error_messages = {'invalid': 'Probabilidade invalida: use numero ou fracao como "1/3".'}

    def to_internal_value(self, data):
        try:
            return parse_probability(data)
        except TreeSpecError:
            self.fail('invalid')

    def to_representation(self, value):
        return float(value)


class VertexField(serializers.CharField):
    default_error_messages = {'vertex': 'Endereco de vertice invalido: use "/" ou "/0/1".'}

    def to_internal_value(self, data):
        text = super().to_internal_value(data)
        try:
            return parse_word(text)
        except TreeAddressError:
            self.fail('vertex')


class TreeSpecSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=VALID_KINDS, default=KIND_HOMOGENEOUS)
    degree = serializers.IntegerField(min_value=3, default=3)
    d_min = serializers.IntegerField(min_value=3, required=False)
    d_max = serializers.IntegerField(min_value=3, required=False)
    kernel = serializers.ChoiceField(choices=VALID_KERNELS, default=KERNEL_UNIFORM)
    epsilon = ProbabilityField(default=1 / 3)
    eta = ProbabilityField(default=1 / 6)
    seed = serializers.IntegerField(min_value=0, max_value=2**64 - 1, default=0)

    def validate(self, attrs):
        attrs.setdefault('d_min', attrs['degree'])
        attrs.setdefault('d_max', attrs['degree'])
        if attrs['d_min'] > attrs['d_max']:
            raise serializers.ValidationError({'d_min': 'd_min deve ser <= d_max.'})
        return attrs


class SolverConfigSerializer(serializers.Serializer):
    depth = serializers.IntegerField(min_value=1, default=12)
    tol = serializers.FloatField(min_value=0, default=1e-10)
    window = serializers.IntegerField(min_value=0, allow_null=True, default=None)

    def validate_tol(self, value):
        if value <= 0:
            raise serializers.ValidationError('tol deve ser positivo.')
        return value


class SimulationConfigSerializer(serializers.Serializer):
    n_paths = serializers.IntegerField(min_value=1, default=100_000)
    horizon = serializers.IntegerField(min_value=0, default=400)
    seed = serializers.IntegerField(min_value=0, max_value=2**64 - 1, default=20240601)
    workers = serializers.IntegerField(min_value=1, allow_null=True, default=None)


class ThresholdsSerializer(serializers.Serializer):
    convergence = serializers.FloatField(min_value=0, default=1e-3)
    boundedness = serializers.FloatField(min_value=0, default=0.05)
    energy = serializers.FloatField(min_value=0, default=1e-4)
    sigmas = serializers.FloatField(min_value=0, default=3.0)


class IdentitiesSerializer(serializers.Serializer):
    selection = serializers.ListField(
        child=serializers.ChoiceField(choices=IDENTITY_CHECKS), default=list(IDENTITY_CHECKS)
    )
    theta = VertexField(default=(0,))
    n_triples = serializers.IntegerField(min_value=0, default=1000)
    triple_tol = serializers.FloatField(min_value=0, default=1e-9)
    check_depth = serializers.IntegerField(min_value=1, default=12)
    deep_depth = serializers.IntegerField(min_value=2, default=64)
    certification_depths = serializers.ListField(
        child=serializers.IntegerField(min_value=2), min_length=2, max_length=2, default=[20, 24]
    )
    certification_distance = serializers.IntegerField(min_value=0, default=12)
    certification_exponent = serializers.IntegerField(min_value=0, default=8)
    kernel_tol = serializers.FloatField(min_value=0, default=1e-8)
    oracle_tol = serializers.FloatField(min_value=0, default=1e-8)
    soundness_paths = serializers.IntegerField(min_value=1, default=20_000)
    soundness_horizon = serializers.IntegerField(min_value=1, default=200)
    ratio_levels = serializers.ListField(child=serializers.IntegerField(min_value=0), default=[4, 8, 12])
    kernel_radius = serializers.IntegerField(min_value=0, default=6)
    sector_depth = serializers.IntegerField(min_value=1, default=6)
    sector_paths = serializers.IntegerField(min_value=1, default=20_000)
    export_radius = serializers.IntegerField(min_value=0, default=4)


class ConditionedHittingSerializer(serializers.Serializer):
    levels = serializers.ListField(child=serializers.IntegerField(min_value=0), default=[1, 2, 3, 4, 5])
    tube_distance = serializers.IntegerField(min_value=1, default=1)
    ray_level = serializers.IntegerField(min_value=1, default=5)
    ray_hit_floor = serializers.FloatField(min_value=0, max_value=1, default=0.999)


class OccupationSerializer(serializers.Serializer):
    radius = serializers.IntegerField(min_value=1, default=4)
    vertices = serializers.ListField(
        child=VertexField(),
        default=[(), (0,), (1,), (2,), (0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)],
    )


class TubeLowerBoundSerializer(serializers.Serializer):
    widths = serializers.ListField(child=serializers.IntegerField(min_value=0), default=[0, 1, 2])
    depth = serializers.IntegerField(min_value=0, default=12)


class TubeSurvivalSerializer(serializers.Serializer):
    width = serializers.IntegerField(min_value=0, default=1)
    level = serializers.IntegerField(min_value=0, default=10)
    slack = serializers.FloatField(min_value=0, default=0.02)


class MartingaleIdentitySerializer(serializers.Serializer):
    radius = serializers.IntegerField(min_value=1, default=6)
    horizon = serializers.IntegerField(min_value=1, default=200)
    mixture_theta = VertexField(default=(1,))
    mixture_weight = serializers.FloatField(min_value=0, max_value=1, default=0.5)


class LemmasSerializer(serializers.Serializer):
    selection = serializers.ListField(child=serializers.ChoiceField(choices=LEMMA_CHECKS), default=list(LEMMA_CHECKS))
    theta = VertexField(default=(0,))
    table_depth = serializers.IntegerField(min_value=2, default=60)
    n_paths = serializers.IntegerField(min_value=1, allow_null=True, default=None)
    conditioned_hitting = serializers.DictField(default=dict)
    occupation = serializers.DictField(default=dict)
    tube_lower_bound = serializers.DictField(default=dict)
    tube_survival = serializers.DictField(default=dict)
    martingale_identity = serializers.DictField(default=dict)

    def validate(self, attrs):
        return validate_sections(
            attrs,
            {
                'conditioned_hitting': ConditionedHittingSerializer,
                'occupation': OccupationSerializer,
                'tube_lower_bound': TubeLowerBoundSerializer,
                'tube_survival': TubeSurvivalSerializer,
                'martingale_identity': MartingaleIdentitySerializer,
            },
        )


class FatouSerializer(serializers.Serializer):
    theta0 = VertexField(default=(1,))
    n_rays = serializers.IntegerField(min_value=0, default=500)
    sample_depth = serializers.IntegerField(min_value=1, default=12)
    scale = serializers.IntegerField(min_value=1, default=24)
    table_depth = serializers.IntegerField(min_value=2, default=72)
    width = serializers.IntegerField(min_value=0, default=1)
    paths_per_ray = serializers.IntegerField(min_value=0, default=4)
    horizon = serializers.IntegerField(min_value=1, default=400)
    max_kernel_width = serializers.FloatField(min_value=0, default=1e-6)
    agreement_gate = serializers.FloatField(min_value=0, max_value=1, default=0.95)
    force_include_theta0 = serializers.BooleanField(default=True)
    functions = serializers.ListField(child=serializers.CharField(), allow_null=True, default=None)
    suite = serializers.CharField(allow_blank=True, default='')


class SimulateSerializer(serializers.Serializer):
    mode = serializers.ChoiceField(choices=SIMULATION_MODES, default='plain')
    x0 = VertexField(default=())
    theta = VertexField(default=(0,))
    table_depth = serializers.IntegerField(min_value=2, default=60)
    n_paths = serializers.IntegerField(min_value=1, allow_null=True, default=None)
    horizon = serializers.IntegerField(min_value=0, allow_null=True, default=None)
    max_kernel_width = serializers.FloatField(min_value=0, default=1e-6)
    export_paths = serializers.BooleanField(default=True)


class ExperimentConfigSerializer(serializers.Serializer):
    tree = serializers.DictField(default=dict)
    solver = serializers.DictField(default=dict)
    simulation = serializers.DictField(default=dict)
    thresholds = serializers.DictField(default=dict)
    identities = serializers.DictField(default=dict)
    lemmas = serializers.DictField(default=dict)
    fatou = serializers.DictField(default=dict)
    simulate = serializers.DictField(default=dict)
    output_dir = serializers.CharField(allow_blank=True, default='')

    def validate(self, attrs):
        return validate_sections(
            attrs,
            {
                'tree': TreeSpecSerializer,
                'solver': SolverConfigSerializer,
                'simulation': SimulationConfigSerializer,
                'thresholds': ThresholdsSerializer,
                'identities': IdentitiesSerializer,
                'lemmas': LemmasSerializer,
                'fatou': FatouSerializer,
                'simulate': SimulateSerializer,
            },
        )


def validate_sections(attrs: dict, sections: dict) -> dict:
    """Runs each nested section through its serializer so missing keys get their defaults."""
    errors = {}
    for name, serializer_class in sections.items():
        serializer = serializer_class(data=attrs.get(name) or {})
        if serializer.is_valid():
            attrs[name] = dict(serializer.validated_data)
        else:
            errors[name] = serializer.errors
    if errors:
        raise serializers.ValidationError(errors)
    return attrs
