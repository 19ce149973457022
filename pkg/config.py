import json
import logging
import os
from dataclasses import fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from dotenv import load_dotenv

from models.data_models import RunConfig
from models.errors import ValidationError

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG_NAME = "effective_config.json"


class Config:
    """Configuration class for the uncertainty attention lab"""

    # Environment settings
    LOG_LEVEL = os.getenv("UCAM_LOG_LEVEL", "INFO")
    OUTPUT_DIR = os.getenv("UCAM_OUTPUT_DIR", "runs")
    DEBUG = os.getenv("UCAM_DEBUG", "false").strip().lower() in ("1", "true", "yes", "on")

    # Published experiment settings
    FULL_SCALE_MC_SAMPLES = 25
    FULL_SCALE_ATTENTION_MAP_SIZE = 14
    FULL_SCALE_IMAGE_SIZE = 448
    FULL_SCALE_SMOOTHING_KERNEL = 31
    FULL_SCALE_SMOOTHING_SIGMA = 1.0

    # Named presets, applied before the config file and flag overrides
    PRESETS = {
        "full": {
            "train": {
                "adam_lr": 1e-4,
                "adam_beta1": 0.95,
                "adam_beta2": 0.99,
                "adam_epsilon": 1e-8,
                "sgd_lr": 0.004,
                "batch_size": 200,
                "eval_mc_samples": 25,
            },
            "visualization": {
                "image_size": 448,
                "kernel_size": 31,
                "sigma": 1.0,
            },
        },
    }

    # Value aliases accepted on the command line
    VALUE_ALIASES = {
        "emd_method": {"exact": "exact_small"},
    }

    @classmethod
    def validate(cls):
        """Validate the environment-driven settings"""
        errors = []

        if cls.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            errors.append("UCAM_LOG_LEVEL must be one of DEBUG, INFO, WARNING, ERROR, CRITICAL")

        if not cls.OUTPUT_DIR:
            errors.append("UCAM_OUTPUT_DIR must not be empty")

        return errors


# ----------------------------------------------------------------------------
# Run configuration
# ----------------------------------------------------------------------------

def _normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def _coerce(value, current, name: str):
    """Convert ``value`` to the type of the field's current value."""
    alias = Config.VALUE_ALIASES.get(name.rsplit(".", 1)[-1], {})
    if isinstance(value, str) and value in alias:
        value = alias[value]
    try:
        if isinstance(current, bool):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(current, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if isinstance(current, list):
            items = value.split(",") if isinstance(value, str) else value
            if not isinstance(items, list):
                raise ValueError(value)
            return [float(item) for item in items]
        if isinstance(current, str):
            if not isinstance(value, str):
                raise ValueError(value)
            return value
    except (TypeError, ValueError):
        raise ValidationError(f"invalid value {value!r} for {name} (expected {type(current).__name__})")
    raise ValidationError(f"cannot set {name}")


def _field_names(obj) -> List[str]:
    return [f.name for f in fields(obj)]


def _set_field(config: RunConfig, section: Optional[str], name: str, value) -> RunConfig:
    if section is None:
        current = getattr(config, name)
        return replace(config, **{name: _coerce(value, current, name)})
    target = getattr(config, section)
    current = getattr(target, name)
    return replace(config, **{section: replace(target, **{name: _coerce(value, current, f"{section}.{name}")})})


def _targets(config: RunConfig, key: str) -> List[Tuple[Optional[str], str]]:
    """Resolve a flat or dotted key to the (section, field) pairs it sets."""
    key = _normalize_key(key)
    if "." in key:
        section, name = key.split(".", 1)
        if section not in RunConfig.SECTIONS or name not in _field_names(getattr(config, section)):
            raise ValidationError(f"unknown configuration key '{key}'")
        return [(section, name)]
    matches: List[Tuple[Optional[str], str]] = []
    top_level = [n for n in _field_names(config) if n not in RunConfig.SECTIONS]
    if key in top_level:
        matches.append((None, key))
    for section in RunConfig.SECTIONS:
        if key in _field_names(getattr(config, section)):
            matches.append((section, key))
    if not matches:
        raise ValidationError(f"unknown configuration key '{key}'")
    return matches


def apply_overrides(config: RunConfig, overrides: Dict[str, object]) -> RunConfig:
    """
    Applies flat overrides. An unqualified key present in several sections
    (for example grid_rows in dataset and model) sets all of them.
    """
    for key, value in overrides.items():
        for section, name in _targets(config, key):
            config = _set_field(config, section, name, value)
    return config


def _merge_file(config: RunConfig, payload: Dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise ValidationError("configuration file must hold a JSON object")
    for key, value in payload.items():
        normalized = _normalize_key(key)
        if normalized in RunConfig.SECTIONS:
            if not isinstance(value, dict):
                raise ValidationError(f"configuration section '{normalized}' must be an object")
            for name, item in value.items():
                config = apply_overrides(config, {f"{normalized}.{_normalize_key(name)}": item})
        else:
            config = apply_overrides(config, {normalized: value})
    return config


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, object]] = None,
                    preset: Optional[str] = None) -> RunConfig:
    """
    Builds and validates the effective configuration.

    Precedence, lowest first: dataclass defaults (out_dir from UCAM_OUTPUT_DIR), preset,
    JSON file, overrides.

    Args:
        path: JSON configuration file (sections dataset/model/train/metrics/visualization
            or flat keys)
        overrides: Flat key/value overrides, usually from command-line flags
        preset: Name of an entry in Config.PRESETS

    Returns:
        Validated RunConfig

    Raises:
        ValidationError: naming every offending field
    """
    config = RunConfig(out_dir=Config.OUTPUT_DIR)
    if preset is not None:
        if preset not in Config.PRESETS:
            raise ValidationError(f"unknown preset '{preset}' (available: {', '.join(Config.PRESETS)})")
        config = _merge_file(config, Config.PRESETS[preset])
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"configuration file not found: {path}")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e
        config = _merge_file(config, payload)
    if overrides:
        config = apply_overrides(config, overrides)
    errors = config.validate()
    if errors:
        raise ValidationError("invalid configuration: " + "; ".join(errors))
    return config


def echo_effective_config(config: RunConfig, out_dir: Union[str, Path]) -> Path:
    """Write the effective configuration into ``out_dir``."""
    from services.storage_service import write_json

    path = Path(out_dir) / EFFECTIVE_CONFIG_NAME
    write_json(config.to_dict(), path)
    logger.debug("Effective configuration written to %s", path)
    return path

