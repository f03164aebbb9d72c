"""
DRF serializers for the pipeline config.

The config is an INI file with one section per nested config type. Values
arrive as strings; these serializers coerce and validate them, reject
unknown sections and keys, and build the frozen config dataclasses.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from rest_framework import serializers

from .exceptions import ConfigurationError, RecognitionError
from .objectness import ClusteringParams, PlaneRemovalParams
from .pipeline import GpcSettings, PipelineConfig, TrainingSettings
from .propagation import ConflictPolicy, PropagationConfig
from .synthesis import RenderConfig

NULL_VALUES = {'', 'none', 'null'}


def positive(value):
    if not value > 0:
        raise serializers.ValidationError('Ensure this value is greater than 0.')
    return value


class StrictSerializer(serializers.Serializer):
    """Serializer that rejects keys it does not declare."""

    def validate(self, attrs):
        unknown = sorted(set(self.initial_data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({key: 'Unknown key.' for key in unknown})
        return attrs


class FloatListField(serializers.ListField):
    """Comma separated floats, e.g. ``270, 240, 210``."""

    child = serializers.FloatField()

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [item.strip() for item in data.split(',') if item.strip()]
        return super().to_internal_value(data)


class ClusteringSerializer(StrictSerializer):
    sigma_d = serializers.FloatField(default=0.02, validators=[positive], help_text='Distance threshold (m)')
    sigma_c = serializers.FloatField(default=8.0, validators=[positive], help_text='Intensity threshold (0-255)')
    sigma_s = serializers.FloatField(default=10.0, validators=[positive], help_text='Normal angle threshold (deg)')
    voxel_leaf = serializers.FloatField(default=0.01, validators=[positive])
    min_cluster_points = serializers.IntegerField(default=30, min_value=0)
    min_cluster_extent = serializers.FloatField(default=0.02, min_value=0.0)


class PlaneRemovalSerializer(StrictSerializer):
    inlier_threshold = serializers.FloatField(default=0.01, validators=[positive])
    min_plane_fraction = serializers.FloatField(default=0.2, validators=[positive], max_value=1.0)
    max_iterations = serializers.IntegerField(default=500, min_value=1)
    max_planes = serializers.IntegerField(default=3, min_value=0)


class RenderSerializer(StrictSerializer):
    sample_count = serializers.IntegerField(default=40000, min_value=1)
    noise_sigma = serializers.FloatField(default=None, allow_null=True, min_value=0.0,
                                         help_text='Empty for 0.5% of the model radius')
    rolls = FloatListField(default=[270.0, 240.0, 210.0], min_length=1)
    pitch = serializers.FloatField(default=0.0)
    yaw_start = serializers.FloatField(default=0.0)
    yaw_end = serializers.FloatField(default=360.0)
    yaw_step = serializers.FloatField(default=36.0, validators=[positive])
    camera_distance_factor = serializers.FloatField(default=2.5)
    hpr_gamma = serializers.FloatField(default=3.0, validators=[positive])
    image_size = serializers.IntegerField(default=500, min_value=1)
    focal = serializers.FloatField(default=500.0, validators=[positive])
    principal_x = serializers.FloatField(default=250.0)
    principal_y = serializers.FloatField(default=250.0)
    output_size = serializers.IntegerField(default=224, min_value=1)

    def validate_camera_distance_factor(self, value):
        if value <= 1:
            raise serializers.ValidationError('Ensure this value is greater than 1.')
        return value


class GpcSerializer(StrictSerializer):
    tol = serializers.FloatField(default=1e-6, validators=[positive])
    max_sweeps = serializers.IntegerField(default=100, min_value=1)
    restarts = serializers.IntegerField(default=5, min_value=1)
    damping = serializers.FloatField(default=0.8, validators=[positive], max_value=1.0)


class PropagationSerializer(StrictSerializer):
    tau = serializers.FloatField(default=0.7, max_value=1.0, help_text='Confidence threshold in (0.5, 1]')
    conflict_policy = serializers.ChoiceField(
        choices=[policy.value for policy in ConflictPolicy],
        default=ConflictPolicy.ABANDON.value,
    )

    def validate_tau(self, value):
        if not value > 0.5:
            raise serializers.ValidationError('Ensure this value is greater than 0.5.')
        return value


class TrainingSerializer(StrictSerializer):
    eta = serializers.FloatField(default=1.0, min_value=0.0, max_value=1.0)
    epochs = serializers.IntegerField(default=200, min_value=0)
    learning_rate = serializers.FloatField(default=0.5, validators=[positive])
    batch_size = serializers.IntegerField(default=None, allow_null=True, min_value=1)


class RunSerializer(StrictSerializer):
    seed = serializers.IntegerField(default=0, min_value=0)
    render = serializers.BooleanField(default=True)
    seeds_per_category = serializers.IntegerField(default=3, min_value=1)


SECTIONS = {
    'clustering': ClusteringSerializer,
    'plane_removal': PlaneRemovalSerializer,
    'render': RenderSerializer,
    'gpc': GpcSerializer,
    'propagation': PropagationSerializer,
    'training': TrainingSerializer,
    'pipeline': RunSerializer,
}


def _clean(values: dict) -> dict:
    return {key: None if isinstance(value, str) and value.strip().lower() in NULL_VALUES else value
            for key, value in values.items()}


def validate_sections(sections: dict[str, dict]) -> dict[str, dict]:
    """
    Validate every section; missing sections take their defaults.

    Raises:
        ConfigurationError: listing every invalid or unknown key.
    """
    unknown = sorted(set(sections) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f'unknown config sections: {", ".join(unknown)}')
    validated, errors = {}, {}
    for name, serializer_class in SECTIONS.items():
        serializer = serializer_class(data=_clean(sections.get(name, {})))
        if serializer.is_valid():
            validated[name] = dict(serializer.validated_data)
        else:
            errors[name] = serializer.errors
    if errors:
        details = '; '.join(
            f'[{section}] {key}: {" ".join(str(m) for m in messages)}'
            for section, fields in errors.items()
            for key, messages in fields.items()
        )
        raise ConfigurationError(f'invalid config: {details}')
    return validated


def build_config(validated: dict[str, dict]) -> PipelineConfig:
    render = dict(validated['render'])
    render['principal'] = (render.pop('principal_x'), render.pop('principal_y'))
    render['rolls'] = tuple(render['rolls'])
    run = validated['pipeline']
    try:
        return PipelineConfig(
            clustering=ClusteringParams(**validated['clustering']),
            plane_removal=PlaneRemovalParams(**validated['plane_removal']),
            render=RenderConfig(**render),
            gpc=GpcSettings(**validated['gpc']),
            propagation=PropagationConfig(**validated['propagation']),
            training=TrainingSettings(**validated['training']),
            seed=run['seed'],
            render_views=run['render'],
            seeds_per_category=run['seeds_per_category'],
        )
    except RecognitionError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_pipeline_config(path=None, overrides: dict[str, dict] | None = None) -> PipelineConfig:
    """
    Read an INI config (or only defaults when ``path`` is None), apply
    ``{section: {key: value}}`` overrides from command-line flags and validate.
    """
    sections: dict[str, dict] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(Path(path)) as handle:
                parser.read_file(handle)
        except OSError as exc:
            raise ConfigurationError(f'cannot read config {path}: {exc}') from exc
        except configparser.Error as exc:
            raise ConfigurationError(f'malformed config {path}: {exc}') from exc
        sections = {name: dict(parser[name]) for name in parser.sections()}
    for section, values in (overrides or {}).items():
        sections.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    return build_config(validate_sections(sections))
