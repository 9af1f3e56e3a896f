"""
Run Configuration Module

Reads and writes experiment configs as flat key=value text with dotted
section keys, applies command-line overrides and records run manifests.

File format (configs/base.cfg):
    seed=0
    rollout_length=24
    # [scheduler]
    scheduler.y=2
    # [model]
    model.hidden_dims=128,128,128,128
    threshold=none

Files are parsed with python-dotenv (no variable interpolation). Lists are
comma-separated, optional values use `none`, booleans `true`/`false`. Keys
missing from a file keep their TrainConfig defaults; unknown keys are errors.

Typical usage:
    config = load_config("configs/base.cfg", overrides=["scheduler.y=2"])
    text = serialize_config(config)
    assert parse_config_text(text) == config
"""

import dataclasses
import hashlib
import io
import json
import logging
import typing
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

from dotenv import dotenv_values

from .errors import ConfigError
from .experiment import TrainConfig, apply_preset

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_FILE = "manifest.json"
_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _fields(cls) -> Dict[str, object]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _is_section(tp) -> bool:
    return dataclasses.is_dataclass(tp)


def _coerce(key: str, raw: Optional[str], tp):
    text = "" if raw is None else raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is Union:
        inner = [a for a in args if a is not type(None)][0]
        return None if text.lower() in ("none", "") else _coerce(key, text, inner)
    if origin in (tuple, typing.Tuple):
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(key, p, args[0]) for p in parts)
        if len(parts) != len(args):
            raise ConfigError(f"{key} expects {len(args)} comma-separated values, got '{text}'")
        return tuple(_coerce(key, p, a) for p, a in zip(parts, args))
    try:
        if tp is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"cannot read {key}='{text}' as {tp.__name__}")
    return text


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def flatten_config(config: TrainConfig) -> Dict[str, str]:
    """TrainConfig as an ordered {dotted key: text value} mapping."""
    flat = {}
    for name, tp in _fields(TrainConfig).items():
        value = getattr(config, name)
        if _is_section(tp):
            for sub in _fields(tp):
                flat[f"{name}.{sub}"] = _format(getattr(value, sub))
        else:
            flat[name] = _format(value)
    return flat


def unflatten_config(values: Dict[str, Optional[str]], base: Optional[TrainConfig] = None) -> TrainConfig:
    """
    Build a TrainConfig from dotted keys, starting from `base` (defaults when None).

    Raises:
        ConfigError: On unknown keys or values that cannot be coerced
    """
    base = base or TrainConfig()
    top = _fields(TrainConfig)
    sections: Dict[str, Dict[str, object]] = {}
    scalars: Dict[str, object] = {}
    for key, raw in values.items():
        section, _, sub = key.partition(".")
        if section not in top:
            raise ConfigError(f"unknown config key '{key}'")
        tp = top[section]
        if _is_section(tp):
            sub_fields = _fields(tp)
            if sub not in sub_fields:
                raise ConfigError(f"unknown config key '{key}'")
            sections.setdefault(section, {})[sub] = _coerce(key, raw, sub_fields[sub])
        else:
            if sub:
                raise ConfigError(f"unknown config key '{key}'")
            scalars[section] = _coerce(key, raw, tp)
    for section, changes in sections.items():
        try:
            scalars[section] = dataclasses.replace(getattr(base, section), **changes)
        except ValueError as e:
            raise ConfigError(f"invalid {section} settings: {e}")
    return dataclasses.replace(base, **scalars)


def serialize_config(config: TrainConfig) -> str:
    """Config file text; parse_config_text(serialize_config(c)) == c."""
    lines = []
    current = None
    for key, value in flatten_config(config).items():
        section = key.partition(".")[0] if "." in key else None
        if section != current and section is not None:
            lines.append(f"# [{section}]")
        current = section
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> TrainConfig:
    return unflatten_config(dotenv_values(stream=io.StringIO(text), interpolate=False))


def parse_overrides(overrides: Sequence[str]) -> Dict[str, str]:
    parsed = {}
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override '{item}' is not of the form key=value")
        parsed[key.strip()] = value
    return parsed


def apply_overrides(config: TrainConfig, overrides: Sequence[str]) -> TrainConfig:
    return unflatten_config(parse_overrides(overrides), base=config)


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = (),
                preset: Optional[str] = None) -> TrainConfig:
    """
    Read a config file, apply a preset and --set overrides, and validate.

    Args:
        path: Config file; defaults only when None
        overrides: 'key=value' strings applied after the file and preset
        preset: Optional name from PRESETS

    Returns:
        Validated TrainConfig

    Raises:
        ConfigError: If the file is missing or any value is invalid
    """
    config = TrainConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        config = unflatten_config(dotenv_values(path, interpolate=False))
        logger.info(f"Loaded config from {path}")
    if preset:
        config = apply_preset(config, preset)
    return validate_config(apply_overrides(config, overrides))


def validate_config(config: TrainConfig) -> TrainConfig:
    try:
        return config.validate()
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e))


def config_hash(config: TrainConfig) -> str:
    """MD5 of the serialized config with output_dir blanked (identical runs share a hash)."""
    text = serialize_config(dataclasses.replace(config, output_dir=""))
    return hashlib.md5(text.encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    """Provenance record written next to a run's metrics and checkpoints."""
    config: Dict[str, str]
    seed: int
    config_hash: str
    format_version: int = MANIFEST_VERSION
    created_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))
    finished_at: Optional[str] = None
    status: str = "running"

    @classmethod
    def for_config(cls, config: TrainConfig) -> "RunManifest":
        return cls(config=flatten_config(config), seed=config.seed, config_hash=config_hash(config))

    def train_config(self) -> TrainConfig:
        return unflatten_config(self.config)


def write_manifest(directory: Union[str, Path], manifest: RunManifest) -> Path:
    path = Path(directory) / MANIFEST_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(dataclasses.asdict(manifest), indent=2))
    return path


def read_manifest(directory: Union[str, Path]) -> RunManifest:
    path = Path(directory) / MANIFEST_FILE
    if not path.exists():
        raise ConfigError(f"no run manifest in {directory}")
    data = json.loads(path.read_text())
    if data.get("format_version") != MANIFEST_VERSION:
        raise ConfigError(f"unsupported manifest version {data.get('format_version')} in {directory}")
    return RunManifest(**data)


def read_calibration(path: Union[str, Path]) -> float:
    """Threshold stored by the calibrate command."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"calibration file not found: {path}")
    data = json.loads(path.read_text())
    if "threshold" not in data:
        raise ConfigError(f"{path} has no 'threshold' entry")
    return float(data["threshold"])


def write_calibration(path: Union[str, Path], threshold: float, **details) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"threshold": threshold, **details}, indent=2))
    return path
