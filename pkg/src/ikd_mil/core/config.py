"""
Configuration system for ikd_mil.

Every tunable of the pipeline is a field of a plain dataclass. ``RunConfig``
groups them; ``parse_config`` reads a YAML file strictly (unknown keys and
type mismatches are rejected with their dotted key path) and applies the
published defaults for everything left out.

:hierarchy: [Core | Config]
:relates-to:
 - motivated_by: "Runs must be reproducible from a config echo + seed"
 - implements: "dataclasses: 'BackboneSpec', 'LossConfig', 'TrainConfig', 'SynthSpec',
                'FilterSpec', 'MetricsConfig', 'DataConfig', 'RunConfig'"
 - uses: ["library: 'pyyaml'"]

:contract:
 - pre: "Config file is YAML mapping (or empty)"
 - post: "Returns validated RunConfig"
 - invariant: "dump_config(parse(x)) parses back to an equal RunConfig"

:complexity: 6
:decision_cache: "Dataclasses + a small strict coercer instead of a schema library"
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import yaml

from ikd_mil.core.exceptions import ConfigParseError, ConfigurationError
from ikd_mil.utils.formatting import NumpyEncoder
from ikd_mil.utils.hashing import config_content_hash
from ikd_mil.utils.logger import get_logger

DEFAULT_BLOCK_PLAN: List[List[int]] = [[64, 64], [128, 128], [256, 256, 256]]

DistillStructure = Literal["fusion", "a", "b"]
SwitchTrigger = Literal["schedule", "validation"]
StudentInit = Literal["copy", "random"]
DataSourceKind = Literal["synthetic", "folder"]


@dataclass
class BackboneSpec:
    """
    Backbone description: named builder plus per-block channel plan.

    :hierarchy: [Core | Config | BackboneSpec]
    :contract:
     - invariant: "'vgg16-first3' has exactly 3 blocks; custom specs have >= 2"
     - invariant: "each block pools once, so input_size is divisible by 2**blocks"
    """

    name: str = "vgg16-first3"
    block_channel_plan: List[List[int]] = field(
        default_factory=lambda: [list(block) for block in DEFAULT_BLOCK_PLAN]
    )
    input_size: int = 256
    in_channels: int = 3
    pretrained_path: Optional[str] = None

    @property
    def num_blocks(self) -> int:
        return len(self.block_channel_plan)

    @property
    def upsample_factors(self) -> Tuple[int, ...]:
        return tuple(2 ** (i + 1) for i in range(self.num_blocks))

    def validate(self) -> None:
        if self.name == "vgg16-first3" and self.num_blocks != 3:
            raise ConfigurationError(
                f"Backbone 'vgg16-first3' requires exactly 3 blocks, got {self.num_blocks}"
            )
        if self.num_blocks < 2:
            raise ConfigurationError(
                f"A backbone needs at least 2 blocks, got {self.num_blocks}"
            )
        for index, block in enumerate(self.block_channel_plan):
            if not block or any(int(width) <= 0 for width in block):
                raise ConfigurationError(
                    f"Block {index} must list positive channel widths, got {block}"
                )
        if self.in_channels <= 0:
            raise ConfigurationError("in_channels must be positive")
        if self.input_size <= 0 or self.input_size % (2**self.num_blocks) != 0:
            raise ConfigurationError(
                f"input_size {self.input_size} must be a positive multiple of "
                f"{2 ** self.num_blocks} for {self.num_blocks} pooling blocks"
            )


@dataclass
class LossConfig:
    """
    Loss constants.

    :hierarchy: [Core | Config | LossConfig]
    :contract:
     - invariant: "epsilons > 0; a >= 0"
    """

    dice_epsilon: float = 1e-6
    log_epsilon: float = 1e-8
    a: float = 0.25

    def validate(self) -> None:
        if self.dice_epsilon <= 0 or self.log_epsilon <= 0:
            raise ConfigurationError("dice_epsilon and log_epsilon must be > 0")
        if self.a < 0:
            raise ConfigurationError(f"a must be >= 0, got {self.a}")


@dataclass
class TrainConfig:
    """
    Two-stage training schedule and optimizer settings.

    :hierarchy: [Core | Config | TrainConfig]
    :contract:
     - invariant: "counts >= 0; learning_rate >= 0 (> 0 when parsed from file)"
     - invariant: "eval_every_epochs divides switch_period_epochs"
    """

    learning_rate: float = 5e-5
    weight_decay: float = 5e-4
    batch_size: int = 16
    mil_epochs: int = 30
    fusion_fit_epochs: int = 10
    fusion_learning_rate: float = 5e-2
    switch_period_epochs: int = 30
    total_distill_epochs: int = 450
    a: float = 0.25
    seed: int = 0
    distill_structure: DistillStructure = "fusion"
    role_switch: bool = True
    switch_trigger: SwitchTrigger = "schedule"
    student_init: StudentInit = "copy"
    eval_every_epochs: int = 1
    validation_fraction: float = 0.1
    eval_batch_size: int = 32
    device: str = "cpu"

    def validate(self) -> None:
        counts = {
            "batch_size": self.batch_size,
            "mil_epochs": self.mil_epochs,
            "fusion_fit_epochs": self.fusion_fit_epochs,
            "switch_period_epochs": self.switch_period_epochs,
            "total_distill_epochs": self.total_distill_epochs,
            "eval_batch_size": self.eval_batch_size,
        }
        for name, value in counts.items():
            if value < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {value}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigurationError("batch sizes must be >= 1")
        if self.learning_rate < 0 or self.fusion_learning_rate < 0:
            raise ConfigurationError("learning rates must be >= 0")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.a < 0:
            raise ConfigurationError(f"a must be >= 0, got {self.a}")
        if self.eval_every_epochs < 1:
            raise ConfigurationError("eval_every_epochs must be >= 1")
        if self.switch_period_epochs < 1 and self.total_distill_epochs > 0:
            raise ConfigurationError("switch_period_epochs must be >= 1")
        if self.switch_period_epochs % self.eval_every_epochs != 0:
            raise ConfigurationError(
                f"switch_period_epochs ({self.switch_period_epochs}) must be a multiple "
                f"of eval_every_epochs ({self.eval_every_epochs})"
            )
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must lie in [0, 1)")


@dataclass
class TextureParams:
    """Foreground/background color and noise statistics of synthetic patches."""

    background_color: Tuple[float, float, float] = (0.86, 0.62, 0.78)
    foreground_color: Tuple[float, float, float] = (0.45, 0.22, 0.55)
    background_noise: float = 0.06
    foreground_noise: float = 0.09
    contrast: float = 0.35
    smoothing_sigma: float = 1.0

    def validate(self) -> None:
        for color in (self.background_color, self.foreground_color):
            if any(not 0.0 <= c <= 1.0 for c in color):
                raise ConfigurationError(f"colors must lie in [0, 1], got {color}")
        if self.background_noise < 0 or self.foreground_noise < 0:
            raise ConfigurationError("noise levels must be >= 0")
        if not 0.0 <= self.contrast <= 1.0:
            raise ConfigurationError("contrast must lie in [0, 1]")
        if self.smoothing_sigma < 0:
            raise ConfigurationError("smoothing_sigma must be >= 0")


@dataclass
class BlobParams:
    """Count and radius ranges of elliptical lesion blobs."""

    count_min: int = 1
    count_max: int = 3
    radius_min: int = 5
    radius_max: int = 12
    max_retries: int = 200

    def validate(self, image_size: int) -> None:
        if not 1 <= self.count_min <= self.count_max:
            raise ConfigurationError("blob counts must satisfy 1 <= count_min <= count_max")
        if not 1 <= self.radius_min <= self.radius_max:
            raise ConfigurationError(
                "blob radii must satisfy 1 <= radius_min <= radius_max"
            )
        if self.radius_max * 2 >= image_size:
            raise ConfigurationError(
                f"radius_max {self.radius_max} must be < image_size/2 ({image_size / 2})"
            )
        if self.max_retries < 1:
            raise ConfigurationError("max_retries must be >= 1")


@dataclass
class SynthSpec:
    """
    Synthetic dataset description.

    :hierarchy: [Core | Config | SynthSpec]
    :contract:
     - invariant: "counts >= 0; blob radii < image_size/2"
    """

    count_pos: int = 400
    count_neg: int = 400
    image_size: int = 64
    texture: TextureParams = field(default_factory=TextureParams)
    blobs: BlobParams = field(default_factory=BlobParams)
    seed: int = 0

    def validate(self) -> None:
        if self.count_pos < 0 or self.count_neg < 0:
            raise ConfigurationError("counts must be >= 0")
        if self.image_size < 4:
            raise ConfigurationError("image_size must be >= 4")
        self.texture.validate()
        self.blobs.validate(self.image_size)


@dataclass
class FilterSpec:
    """
    Patch ingestion filter.

    :hierarchy: [Core | Config | FilterSpec]
    :contract:
     - invariant: "thresholds in (0, 1]"
    """

    background_drop_threshold: float = 0.80
    test_positive_drop_threshold: float = 0.90
    white_intensity_cutoff: float = 0.90
    target_size: int = 256

    def validate(self) -> None:
        for name in (
            "background_drop_threshold",
            "test_positive_drop_threshold",
            "white_intensity_cutoff",
        ):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1], got {value}")
        if self.target_size < 1:
            raise ConfigurationError("target_size must be >= 1")


@dataclass
class MetricsConfig:
    """
    Evaluation conventions.

    :hierarchy: [Core | Config | MetricsConfig]
    :contract:
     - invariant: "threshold in (0, 1)"
    """

    threshold: float = 0.5
    empty_score: float = 1.0
    # None means the image diagonal
    empty_prediction_hd: Optional[float] = None

    def validate(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not 0.0 <= self.empty_score <= 1.0:
            raise ConfigurationError("empty_score must lie in [0, 1]")
        if self.empty_prediction_hd is not None and self.empty_prediction_hd < 0:
            raise ConfigurationError("empty_prediction_hd must be >= 0")


@dataclass
class DataConfig:
    """Where training and test patches come from."""

    source: DataSourceKind = "synthetic"
    synth: SynthSpec = field(default_factory=SynthSpec)
    test_count_pos: int = 100
    test_count_neg: int = 100
    train_folder: Optional[str] = None
    train_manifest: Optional[str] = None
    test_folder: Optional[str] = None
    test_manifest: Optional[str] = None
    filter: FilterSpec = field(default_factory=FilterSpec)

    def validate(self) -> None:
        self.synth.validate()
        self.filter.validate()
        if self.test_count_pos < 0 or self.test_count_neg < 0:
            raise ConfigurationError("test counts must be >= 0")
        if self.source == "folder" and not (self.train_folder and self.train_manifest):
            raise ConfigurationError(
                "source 'folder' needs train_folder and train_manifest"
            )


@dataclass
class RunConfig:
    """
    Complete run description: every field needed to re-run bit-identically.

    :hierarchy: [Core | Config | RunConfig]
    """

    run_name: str = "run"
    output_dir: str = "runs"
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def validate(self) -> None:
        self.backbone.validate()
        self.loss.validate()
        self.train.validate()
        self.data.validate()
        self.metrics.validate()

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.run_name

    def loss_config(self) -> LossConfig:
        """Loss constants with the training-level scale factor applied."""
        return dataclasses.replace(self.loss, a=self.train.a)


# <semantic_block: strict_parsing>


def _type_name(tp: Any) -> str:
    return getattr(tp, "__name__", None) or str(tp).replace("typing.", "")


def _coerce(value: Any, tp: Any, path: str) -> Any:
    """Check ``value`` against annotation ``tp`` and convert it."""
    origin = get_origin(tp)
    args = get_args(tp)

    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigParseError(
                f"expected a mapping, got {type(value).__name__}", path
            )
        return _build_dataclass(tp, value, path)

    if origin is Union:
        if value is None and type(None) in args:
            return None
        non_none = [arg for arg in args if arg is not type(None)]
        return _coerce(value, non_none[0], path)

    if origin is Literal:
        if value not in args:
            raise ConfigParseError(f"must be one of {list(args)}, got {value!r}", path)
        return value

    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigParseError(f"expected a list, got {type(value).__name__}", path)
        (item_type,) = args
        return [_coerce(item, item_type, f"{path}[{i}]") for i, item in enumerate(value)]

    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigParseError(f"expected a list of {len(args)} items", path)
        return tuple(
            _coerce(item, item_type, f"{path}[{i}]")
            for i, (item, item_type) in enumerate(zip(value, args))
        )

    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigParseError(f"expected bool, got {type(value).__name__}", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigParseError(f"expected int, got {type(value).__name__}", path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigParseError(f"expected float, got {type(value).__name__}", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigParseError(f"expected str, got {type(value).__name__}", path)
        return value

    raise ConfigParseError(f"unsupported field type {_type_name(tp)}", path)


def _build_dataclass(cls: Any, raw: Dict[str, Any], path: str = "") -> Any:
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            key_path = f"{path}.{key}" if path else str(key)
            raise ConfigParseError(f"unknown key '{key}'", key_path)
    kwargs = {}
    for name, value in raw.items():
        key_path = f"{path}.{name}" if path else name
        kwargs[name] = _coerce(value, hints[name], key_path)
    return cls(**kwargs)


def config_from_dict(raw: Optional[Dict[str, Any]], strict_learning_rate: bool = True) -> RunConfig:
    """
    Build and validate a RunConfig from a plain mapping.

    :hierarchy: [Core | Config | FromDict]
    :contract:
     - pre: "raw is a mapping or None"
     - post: "Returns validated RunConfig; defaults fill missing keys"

    Args:
        raw: Parsed YAML mapping
        strict_learning_rate: Reject learning_rate == 0 (file-level invariant)

    Raises:
        ConfigParseError: unknown key, type mismatch or violated constraint
    """
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigParseError("top level must be a mapping")
    cfg = _build_dataclass(RunConfig, raw)
    cfg = _resolve_scale(cfg, raw)
    for section in ("backbone", "train", "loss", "data", "metrics"):
        try:
            getattr(cfg, section).validate()
        except ConfigurationError as e:
            raise ConfigParseError(str(e), _field_path(section, getattr(cfg, section), str(e))) from e
    if strict_learning_rate and cfg.train.learning_rate <= 0:
        raise ConfigParseError("must be > 0", "train.learning_rate")
    return cfg


def _given(raw: Dict[str, Any], section: str, key: str) -> bool:
    block = raw.get(section)
    return isinstance(block, dict) and key in block


def _resolve_scale(cfg: RunConfig, raw: Dict[str, Any]) -> RunConfig:
    """
    Make ``train.a`` and ``loss.a`` agree; ``train.a`` is the source of truth.

    A file may set the scale in either section. When only ``loss.a`` is given,
    ``train.a`` takes its value. When both are given and differ, ``train.a``
    wins and a warning names the ignored value.

    :hierarchy: [Core | Config | ResolveScale]
    """
    in_train, in_loss = _given(raw, "train", "a"), _given(raw, "loss", "a")
    if in_loss and not in_train:
        cfg.train = dataclasses.replace(cfg.train, a=cfg.loss.a)
    elif in_train and in_loss and cfg.loss.a != cfg.train.a:
        get_logger(__name__, _resolve_scale).warning(
            f"[Config|Scale] loss.a={cfg.loss.a} ignored | train.a={cfg.train.a} applies"
        )
    cfg.loss = dataclasses.replace(cfg.loss, a=cfg.train.a)
    return cfg


def _field_path(section: str, section_cfg: Any, message: str) -> str:
    """Best dotted key path for a section-level validation message."""
    for f in dataclasses.fields(section_cfg):
        if message.startswith(f.name) or f" {f.name} " in f" {message} ":
            return f"{section}.{f.name}"
    return section


def parse_config(path: Union[str, Path, None]) -> RunConfig:
    """
    Parse a YAML config file into a validated RunConfig.

    :hierarchy: [Core | Config | Parse]
    :contract:
     - pre: "path is readable YAML (an empty file is allowed) or None"
     - post: "Returns RunConfig with published defaults applied"

    Args:
        path: Config file path. None returns the defaults.

    Returns:
        RunConfig

    Raises:
        ConfigParseError: unknown key, type mismatch or constraint violation
    """
    logger = get_logger(__name__, parse_config)
    if path is None:
        return config_from_dict({})
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigParseError(f"cannot read config file {path}: {e}") from e
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigParseError(f"invalid YAML in {path}: {e}") from e
    cfg = config_from_dict(raw)
    logger.info(f"[Config|Parse] Loaded {path} | run_name={cfg.run_name}")
    return cfg


def config_to_dict(cfg: Any) -> Dict[str, Any]:
    """Plain-data view of a config dataclass (tuples become lists)."""

    def _plain(value: Any) -> Any:
        if isinstance(value, dict):
            return {k: _plain(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [_plain(v) for v in value]
        return value

    return _plain(dataclasses.asdict(cfg))


def dump_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig to YAML text."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def write_config_echo(cfg: RunConfig, run_dir: Union[str, Path]) -> Path:
    """Write the effective config to ``<run_dir>/config.yaml``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "config.yaml"
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path


def write_run_manifest(
    cfg: RunConfig, run_dir: Union[str, Path], command: str, extra: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write ``<run_dir>/manifest.json``: seed, config content hash, version, command.

    :hierarchy: [Core | Config | RunManifest]
    """
    from ikd_mil import __version__

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "seed": cfg.train.seed,
        "config_hash": config_content_hash(config_to_dict(cfg)),
        "version": __version__,
        "cache_dir": os.getenv("IKD_MIL_CACHE"),
    }
    if extra:
        manifest.update(extra)
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, cls=NumpyEncoder), encoding="utf-8")
    return path


def dataclass_from_dict(cls: Any, raw: Dict[str, Any], key_path: str = "") -> Any:
    """Strictly build any config dataclass (used when reading checkpoints)."""
    if not isinstance(raw, dict):
        raise ConfigParseError("expected a mapping", key_path)
    return _build_dataclass(cls, raw, key_path)
