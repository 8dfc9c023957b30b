import json
import os
from typing import Dict, Any, Optional, Set
import copy

from .exceptions import ConfigError
from .options import PipelineConfig

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "default_config.json")


def _deep_merge(source: Dict[str, Any], destination: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merges a source dictionary into a destination dictionary.

    If a key exists in both and both values are dictionaries, the merge
    recurses. Otherwise the value from `source` overwrites the one in
    `destination`.

    Note:
        The `destination` dictionary is modified in place.

    Args:
        source: The dictionary to merge from. Its values take precedence.
        destination: The dictionary to merge into.

    Returns:
        The modified `destination` dictionary.
    """
    for key, value in source.items():
        if isinstance(value, dict) and key in destination and isinstance(destination[key], dict):
            _deep_merge(value, destination[key])
        else:
            destination[key] = value
    return destination


def _resolve_preset(
    name: str,
    presets: Dict[str, Any],
    resolved: Dict[str, Any],
    resolving_stack: Set[str]
) -> Dict[str, Any]:
    """Resolves one preset, following its `inherits` chain.

    Parents are resolved first and the child's settings are merged on top of
    a copy of the parent's. Resolved presets are cached in `resolved`.

    Args:
        name: The preset to resolve.
        presets: All raw presets, keyed by name.
        resolved: Cache of already resolved presets.
        resolving_stack: Presets on the current inheritance chain.

    Returns:
        The flattened settings of the preset.

    Raises:
        ConfigError: On circular inheritance or an unknown preset name.
    """
    if name in resolving_stack:
        raise ConfigError(f"Circular inheritance detected for preset '{name}'. Chain: {' -> '.join(resolving_stack)} -> {name}")

    if name in resolved:
        return resolved[name]

    if name not in presets:
        raise ConfigError(f"Preset '{name}' not found in configuration files.")

    resolving_stack.add(name)
    preset = copy.deepcopy(presets[name])
    if not isinstance(preset, dict):
        raise ConfigError(f"Preset '{name}' must be a JSON object.")

    parent_name = preset.pop("inherits", None)
    if parent_name:
        parent = _resolve_preset(parent_name, presets, resolved, resolving_stack)
        settings = _deep_merge(preset, copy.deepcopy(parent))
    else:
        settings = preset

    resolving_stack.remove(name)
    resolved[name] = settings
    return settings


def _read_json(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ConfigError(f"Configuration file not found at: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Error decoding JSON from {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must map preset names to settings.")
    return data


def load_presets(user_config_path: Optional[str] = None) -> Dict[str, Any]:
    """Loads and resolves all configuration presets.

    The built-in `default_config.json` is read first. A user file of the same
    shape may add presets or replace built-in ones by name; a user preset may
    `inherits` a built-in one.

    Args:
        user_config_path: Optional path to a user preset file.

    Returns:
        A dictionary of fully resolved presets keyed by name.

    Raises:
        ConfigError: If a file is missing or malformed, or inheritance is circular.
    """
    presets = _read_json(DEFAULT_CONFIG_PATH)
    if user_config_path:
        presets.update(_read_json(user_config_path))

    resolved: Dict[str, Any] = {}
    for name in presets:
        if name not in resolved:
            _resolve_preset(name, presets, resolved, set())
    return resolved


def build_config(
    preset: str = "_default",
    user_config_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> PipelineConfig:
    """Builds a `PipelineConfig` from a preset plus explicit overrides.

    Args:
        preset: Name of the preset to start from.
        user_config_path: Optional user preset file, see `load_presets`.
        overrides: Settings that take precedence over the preset, typically
            from command-line flags. None values are ignored.

    Returns:
        The assembled configuration. It is not yet range-checked.

    Raises:
        ConfigError: If the preset is unknown or names a setting that does
            not exist.
    """
    presets = load_presets(user_config_path)
    if preset not in presets:
        raise ConfigError(f"Preset '{preset}' not found in configuration files.")
    settings = copy.deepcopy(presets[preset])

    for key, value in (overrides or {}).items():
        if value is not None:
            settings[key] = value

    known = set(PipelineConfig.field_names())
    unknown = sorted(k for k in settings if k not in known)
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")

    return PipelineConfig(**settings)
