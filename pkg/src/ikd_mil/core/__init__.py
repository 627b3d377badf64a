"""
Core components of the ikd_mil package.

Exports:
    - RunConfig and its sections: Run description parsed from YAML
    - parse_config / config_from_dict: Strict config loading
    - IkdMilError and subclasses: Error hierarchy
"""

from ikd_mil.core.config import (
    BackboneSpec,
    BlobParams,
    DataConfig,
    FilterSpec,
    LossConfig,
    MetricsConfig,
    RunConfig,
    SynthSpec,
    TextureParams,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
    parse_config,
)
from ikd_mil.core.exceptions import (
    CheckpointError,
    ConfigParseError,
    ConfigurationError,
    DataError,
    IkdMilError,
    InvariantViolationError,
    MissingArtifactError,
    PreconditionError,
    ShapeError,
)

__all__ = [
    "BackboneSpec",
    "BlobParams",
    "CheckpointError",
    "ConfigParseError",
    "ConfigurationError",
    "DataConfig",
    "DataError",
    "FilterSpec",
    "IkdMilError",
    "InvariantViolationError",
    "LossConfig",
    "MetricsConfig",
    "MissingArtifactError",
    "PreconditionError",
    "RunConfig",
    "ShapeError",
    "SynthSpec",
    "TextureParams",
    "TrainConfig",
    "config_from_dict",
    "config_to_dict",
    "dump_config",
    "parse_config",
]
