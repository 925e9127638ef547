import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from app.core.exceptions import ArtifactIOError, ConfigError
from app.models.run_config import RunConfig

CONFIG_DIR = Path(__file__).resolve().parent.parent.parent / "config"
VALID_PROFILES = ["dev", "desk", "full"]
DEFAULT_PROFILE = "desk"


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Failed to parse {path}: {e}")


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def active_profile() -> str:
    load_dotenv()
    profile = os.getenv("DVD_PROFILE", DEFAULT_PROFILE)
    if profile not in VALID_PROFILES:
        raise ConfigError(
            f"Invalid profile '{profile}'. Must be one of: {', '.join(VALID_PROFILES)}"
        )
    return profile


def load_config(config_dir: Optional[Path] = None) -> Dict[str, Any]:
    """Tool settings: base.yaml with the active profile overlay on top."""
    config_dir = Path(config_dir or CONFIG_DIR)
    config: Dict[str, Any] = {}

    base_config_path = config_dir / "base.yaml"
    if base_config_path.exists():
        config.update(_read_yaml(base_config_path))

    profile_config_path = config_dir / f"{active_profile()}.yaml"
    if profile_config_path.exists():
        config = deep_merge(config, _read_yaml(profile_config_path))

    return config


def load_run_file(path: Path) -> Dict[str, Any]:
    """Read a user run config; JSON is parsed as YAML, its superset."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}")
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file {path} is neither JSON nor YAML: {e}")
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigError(f"Config file {path} must hold a mapping at the top level")
    return document


def resolve_run_config(
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
    settings: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Profile `run:` section, then the --config file, then CLI overrides."""
    settings = load_config() if settings is None else settings
    document: Dict[str, Any] = dict(settings.get("run") or {})
    if path is not None:
        document = deep_merge(document, load_run_file(path))
    if overrides:
        document = deep_merge(document, overrides)
    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}")


def tool_version(settings: Optional[Dict[str, Any]] = None) -> str:
    settings = load_config() if settings is None else settings
    return str(settings.get("app_version", "0.0"))


def provenance(run_config: RunConfig, settings: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {
        "tool_version": tool_version(settings),
        "config_digest": run_config.digest(),
        "seed": run_config.seed,
    }


def dump_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_json(payload))
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}")
    return path
