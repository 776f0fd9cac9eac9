"""Config inspection CLI subcommands."""

from __future__ import annotations

import logging
from typing import Any, Optional

import yaml

from ..core.config import ConfigManager

logger = logging.getLogger(__name__)


def _traverse(data: dict, keys: list[str]) -> Any:
    """Traverse a nested dict by dot-notation key parts."""
    current = data
    for k in keys:
        if not isinstance(current, dict) or k not in current:
            raise KeyError(f"Key not found: {'.'.join(keys)}")
        current = current[k]
    return current


def show(config_path: Optional[str] = None) -> str:
    """Return the merged configuration as YAML."""
    return ConfigManager(config_path).dump()


def get_value(config_path: Optional[str], key: str) -> Any:
    """Get a value from the merged config using dot-notation.

    Mappings and lists come back as YAML text, scalars as they are.
    """
    value = _traverse(ConfigManager(config_path).load_config(), key.split("."))
    if isinstance(value, (dict, list)):
        return yaml.safe_dump(value, default_flow_style=None, sort_keys=True).rstrip()
    return value


def validate(config_path: Optional[str] = None) -> tuple[bool, list[str], list[str]]:
    """Run full config validation.

    Returns:
        ``(is_valid, problems, unknown_keys)``
    """
    cfg = ConfigManager(config_path)
    valid = cfg.validate_config()
    return valid, list(cfg.problems), cfg.check_unknown_keys()
