"""
config.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Loads the YAML configuration of the toolkit and exposes it as frozen
    dataclasses:
    - config/defaults.yaml: dsp, model, optimizer, training and fusion sections
    - config/shl_manifest.yaml: channel id -> SHL file name
    - dataset path resolution (--shl-dir flag, then TMD_SHL_DIR)
    - config hashing used to deduplicate runs in the results catalog
"""

import copy
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from src.errors import ConfigurationError

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"
DEFAULTS_FILE = CONFIG_DIR / "defaults.yaml"
MANIFEST_FILE = CONFIG_DIR / "shl_manifest.yaml"
SUITES_DIR = CONFIG_DIR / "suites"

SHL_DIR_ENV = "TMD_SHL_DIR"
SHL_TEST_DIR_ENV = "TMD_SHL_TEST_DIR"


@dataclass(frozen=True)
class DspSettings:
    sample_rate: int = 100
    window_seconds: float = 5.0
    overlap_seconds: float = 4.9
    window: str = "hann"
    log_eps: float = 1e-10
    f_min: float = 0.2
    image_size: Tuple[int, int] = (48, 48)


@dataclass(frozen=True)
class ModelSettings:
    conv_widths: Tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 3
    hidden_width: int = 128
    n_classes: int = 8
    # empty -> chosen from the input geometry
    pool_factors: Tuple[int, ...] = ()


@dataclass(frozen=True)
class OptimizerSettings:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainingSettings:
    epochs: int = 50
    n_seeds: int = 5
    base_seed: int = 0
    batch_size: int = 64
    micro_batch_size: int = 0
    standardize: bool = True


@dataclass(frozen=True)
class FusionSettings:
    bottleneck_width: int = 1
    blend_period: int = 10
    blend_floor: float = 1e-3
    blend_holdout_fraction: float = 0.1
    attention_hidden: int = 32


@dataclass(frozen=True)
class Settings:
    dsp: DspSettings = field(default_factory=DspSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    fusion: FusionSettings = field(default_factory=FusionSettings)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "Settings":
        return settings_from_dict(deep_merge(self.to_dict(), overrides))


_SECTIONS = {
    "dsp": DspSettings,
    "model": ModelSettings,
    "optimizer": OptimizerSettings,
    "training": TrainingSettings,
    "fusion": FusionSettings,
}


def deep_merge(base: Mapping[str, Any], overrides: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    """Recursively merge `overrides` on top of `base` (neither is modified)."""
    merged = copy.deepcopy(dict(base))
    for key, value in (overrides or {}).items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _build_section(name: str, values: Mapping[str, Any]):
    section_type = _SECTIONS[name]
    known = {item.name: item for item in dataclasses.fields(section_type)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) in config section '{name}': {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in values.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return section_type(**kwargs)


def settings_from_dict(values: Mapping[str, Any]) -> Settings:
    unknown = set(values) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    settings = Settings(**{name: _build_section(name, values.get(name) or {})
                           for name in _SECTIONS})
    validate_settings(settings)
    return settings


def validate_settings(settings: Settings) -> None:
    training = settings.training
    if training.epochs < 1:
        raise ConfigurationError(f"training.epochs must be >= 1, got {training.epochs}")
    if training.n_seeds < 1:
        raise ConfigurationError(f"training.n_seeds must be >= 1, got {training.n_seeds}")
    if training.batch_size < 1 or training.micro_batch_size < 0:
        raise ConfigurationError("training.batch_size must be >= 1 and micro_batch_size >= 0")
    if settings.fusion.bottleneck_width < 1:
        raise ConfigurationError(
            f"fusion.bottleneck_width must be >= 1, got {settings.fusion.bottleneck_width}")
    if settings.fusion.blend_period < 1:
        raise ConfigurationError("fusion.blend_period must be >= 1")
    if not 0.0 < settings.fusion.blend_holdout_fraction < 1.0:
        raise ConfigurationError("fusion.blend_holdout_fraction must lie in (0, 1)")
    if not 0.0 < settings.fusion.blend_floor < 1.0:
        raise ConfigurationError(
            f"fusion.blend_floor must lie in (0, 1), got {settings.fusion.blend_floor}")
    if settings.dsp.overlap_seconds >= settings.dsp.window_seconds:
        raise ConfigurationError("dsp.overlap_seconds must be shorter than dsp.window_seconds")
    if len(settings.model.conv_widths) != 3:
        raise ConfigurationError("model.conv_widths must list three widths")


def read_yaml(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML ({exc})") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping at top level")
    return data


def load_settings(path: Optional[Path] = None,
                  overrides: Optional[Mapping[str, Any]] = None) -> Settings:
    """Defaults file, then an optional user file, then in-memory overrides."""
    values = read_yaml(DEFAULTS_FILE) if DEFAULTS_FILE.is_file() else {}
    if path is not None:
        values = deep_merge(values, read_yaml(path))
    values = deep_merge(values, overrides)
    return settings_from_dict(values)


def load_manifest(path: Optional[Path] = None) -> Dict[str, str]:
    data = read_yaml(path or MANIFEST_FILE)
    files = data.get("files", data)
    if "Label" not in files:
        raise ConfigurationError("SHL manifest must name the 'Label' file")
    return {str(key): str(value) for key, value in files.items()}


def resolve_dataset_path(cli_value: Optional[str], env_var: str = SHL_DIR_ENV) -> Optional[Path]:
    """The command-line flag wins over the environment variable."""
    if cli_value:
        return Path(cli_value).expanduser()
    env_value = os.environ.get(env_var)
    if env_value:
        logger.debug("Dataset path taken from %s", env_var)
        return Path(env_value).expanduser()
    return None


def config_hash(config: Mapping[str, Any]) -> str:
    """MD5 of the canonical JSON form of a resolved run configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.md5(canonical.encode("utf-8")).hexdigest()
