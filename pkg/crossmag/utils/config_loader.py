# !/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Configuration loader with validation and caching.

The configuration file is YAML with one mapping per section. Unknown sections
or keys are rejected so typos never pass silently; every diagnostic names the
dotted field and, when the value came from a file, its line number.
"""

import copy
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Mapping, Optional, Tuple, Union

import yaml

from .errors import ConfigError
from .logging_setup import get_logger

logger = get_logger(__name__)

NUMBER = (int, float)
OPTIONAL_NUMBER = (int, float, type(None))
OPTIONAL_INT = (int, type(None))
OPTIONAL_STR = (str, type(None))

CONFIG_SCHEMA: Dict[str, Dict[str, Dict[str, Any]]] = {
    "global": {
        "required": {},
        "optional": {"seed": int, "run_dir": str, "log_level": str},
    },
    "synth": {
        "required": {"n_slides": int},
        "optional": {
            "height": int,
            "width": int,
            "n_classes": int,
            "region_cell": int,
            "dominant_fraction": NUMBER,
            "noise_std": NUMBER,
            "stripe_amplitude": NUMBER,
            "background_threshold": OPTIONAL_NUMBER,
            "workers": int,
        },
    },
    "encoder": {
        "required": {},
        "optional": {
            "student_preset": str,
            "teacher_preset": str,
            "student_overrides": dict,
            "teacher_overrides": dict,
            "init_seed": int,
        },
    },
    "distill": {
        "required": {},
        "optional": {
            "lambda_global": NUMBER,
            "lambda_local": NUMBER,
            "peak_lr": NUMBER,
            "total_steps": int,
            "ema_decay": NUMBER,
            "batch_size": int,
            "weight_decay": NUMBER,
            "warmup_steps": int,
            "augment": bool,
            "log_every": int,
        },
    },
    "mil": {
        "required": {},
        "optional": {
            "models": list,
            "epochs": int,
            "lr": NUMBER,
            "weight_decay": NUMBER,
            "folds": int,
            "attention_dim": int,
            "gated": bool,
            "class_weighted": bool,
            "external_fraction": NUMBER,
            "n_boot": int,
            "workers": int,
        },
    },
    "e2e": {
        "required": {},
        "optional": {
            "block_grid": list,
            "epochs": int,
            "lr": NUMBER,
            "weight_decay": NUMBER,
            "folds": int,
            "attention_dim": int,
            "gated": bool,
            "class_weighted": bool,
            "checkpointing": bool,
            "max_patches_per_bag": OPTIONAL_INT,
            "activation_budget_mb": OPTIONAL_NUMBER,
            "projection_dim": OPTIONAL_INT,
            "n_boot": int,
        },
    },
    "probe": {
        "required": {},
        "optional": {"test_fraction": NUMBER, "l2": NUMBER, "max_iter": int, "tol": NUMBER, "n_boot": int},
    },
    "stats": {
        "required": {},
        "optional": {"models": list, "task": str, "n_boot": int},
    },
    "bench": {
        "required": {},
        "optional": {
            "fixture_file": OPTIONAL_STR,
            "measure": bool,
            "encoders": list,
            "n_patches": int,
            "batch_size": int,
            "warmup_batches": int,
        },
    },
}

COMMAND_SECTIONS: Dict[str, Tuple[str, ...]] = {
    "synth": ("global", "synth"),
    "distill": ("global", "encoder", "distill"),
    "mil": ("global", "encoder", "mil"),
    "e2e": ("global", "encoder", "e2e"),
    "probe": ("global", "encoder", "probe"),
    "stats": ("global", "stats"),
    "bench": ("global", "encoder", "bench"),
}

_DEFAULT_CONFIG: Dict[str, Dict[str, Any]] = {
    "global": {"seed": 0, "run_dir": "runs/default", "log_level": "INFO"},
    "synth": {
        "height": 1792,
        "width": 1792,
        "n_classes": 2,
        "region_cell": 224,
        "dominant_fraction": 0.75,
        "noise_std": 12.0,
        "stripe_amplitude": 24.0,
        "background_threshold": None,  # whiteness filter hook, off by default
        "workers": 1,
    },
    "encoder": {
        "student_preset": "toy_student",
        "teacher_preset": "toy_teacher",
        "student_overrides": {},
        "teacher_overrides": {},
        "init_seed": 0,
    },
    "distill": {
        "lambda_global": 1.0,
        "lambda_local": 0.5,
        "peak_lr": 5e-4,
        "total_steps": 200,
        "ema_decay": 0.999,
        "batch_size": 32,
        "weight_decay": 0.04,
        "warmup_steps": 0,
        "augment": True,
        "log_every": 50,
    },
    "mil": {
        "models": ["student_ema", "student_init", "teacher_20x"],
        "epochs": 20,
        "lr": 1e-3,
        "weight_decay": 1e-4,
        "folds": 5,
        "attention_dim": 64,
        "gated": False,
        "class_weighted": False,
        "external_fraction": 0.0,
        "n_boot": 1000,
        "workers": 1,
    },
    "e2e": {
        "block_grid": [0, 1, 2, 4, 6, "all"],
        "epochs": 5,
        "lr": 1e-4,
        "weight_decay": 1e-4,
        "folds": 5,
        "attention_dim": 64,
        "gated": False,
        "class_weighted": False,
        "checkpointing": True,
        "max_patches_per_bag": None,
        "activation_budget_mb": None,
        "projection_dim": None,
        "n_boot": 1000,
    },
    "probe": {"test_fraction": 0.3, "l2": 1e-4, "max_iter": 500, "tol": 1e-5, "n_boot": 1000},
    "stats": {"models": ["student_ema", "student_init"], "task": "synthetic", "n_boot": 1000},
    "bench": {
        "fixture_file": None,
        "measure": True,
        "encoders": ["student"],
        "n_patches": 256,
        "batch_size": 32,
        "warmup_batches": 2,
    },
}

_CONFIG_CACHE: Optional[Dict[str, Dict[str, Any]]] = None
_LINE_MAP: Dict[str, int] = {}


def _type_name(expected: Union[type, Tuple[type, ...]]) -> str:
    if isinstance(expected, tuple):
        return " or ".join(t.__name__ for t in expected)
    return expected.__name__


def _check_type(value: Any, expected: Union[type, Tuple[type, ...]]) -> bool:
    # bool is an int subclass; never accept it where a number is expected
    if isinstance(value, bool):
        return expected is bool or (isinstance(expected, tuple) and bool in expected)
    return isinstance(value, expected)


def build_line_map(text: str) -> Dict[str, int]:
    """
    Map dotted config paths to 1-based line numbers in a YAML document.

    >>> build_line_map("synth:\\n  n_slides: 4\\n")
    {'synth': 1, 'synth.n_slides': 2}
    """
    lines: Dict[str, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node: yaml.Node, prefix: str) -> None:
        if not isinstance(node, yaml.MappingNode):
            return
        for key_node, value_node in node.value:
            key = f"{prefix}{key_node.value}"
            lines[key] = key_node.start_mark.line + 1
            walk(value_node, key + ".")

    if root is not None:
        walk(root, "")
    return lines


def validate_config(
    config: Dict[str, Any],
    sections: Optional[Iterable[str]] = None,
    line_map: Optional[Dict[str, int]] = None,
) -> bool:
    """
    Validate configuration against schema.

    Args:
        config: Configuration dictionary to validate
        sections: Sections whose required keys must be present (default: none)
        line_map: Dotted-path to line number map for diagnostics

    Returns:
        bool: True if valid

    Raises:
        ConfigError: If configuration is invalid
    """
    line_map = line_map or {}

    for section, values in config.items():
        if section not in CONFIG_SCHEMA:
            raise ConfigError(f"Unknown config section: {section}", field=section, line=line_map.get(section))
        if not isinstance(values, dict):
            raise ConfigError(
                f"Section {section} must be a mapping, got {type(values).__name__}",
                field=section,
                line=line_map.get(section),
            )
        schema = CONFIG_SCHEMA[section]
        allowed = {**schema["required"], **schema["optional"]}
        for key, value in values.items():
            field = f"{section}.{key}"
            if key not in allowed:
                raise ConfigError(f"Unknown config key: {field}", field=field, line=line_map.get(field))
            if not _check_type(value, allowed[key]):
                raise ConfigError(
                    f"Invalid type for {field}. Expected {_type_name(allowed[key])}, got {type(value).__name__}",
                    field=field,
                    line=line_map.get(field),
                )

    for section in sections or ():
        for key in CONFIG_SCHEMA[section]["required"]:
            if key not in config.get(section, {}):
                field = f"{section}.{key}"
                raise ConfigError(f"Missing required config key: {field}", field=field, line=line_map.get(section))

    return True


def merge_with_defaults(data: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    """Overlay ``data`` section by section onto a copy of the defaults."""
    config = copy.deepcopy(_DEFAULT_CONFIG)
    for section, values in data.items():
        if isinstance(values, dict) and section in config:
            config[section].update(values)
        else:
            config[section] = values
    return config


def load_config(config_path: str = "config.yaml", sections: Optional[Iterable[str]] = None) -> None:
    """
    Load configuration from YAML file or use defaults.

    Args:
        config_path: Path to configuration file
        sections: Sections whose required keys must be present

    Raises:
        ConfigError: If configuration is invalid or unreadable
    """
    global _CONFIG_CACHE, _LINE_MAP

    line_map: Dict[str, int] = {}
    try:
        if os.path.exists(config_path):
            text = Path(config_path).read_text(encoding="utf-8")
            data = yaml.safe_load(text)
            line_map = build_line_map(text)
            if data is None:
                data = {}
            if not isinstance(data, dict):
                raise ConfigError(f"Config file {config_path} must contain a mapping of sections")
        else:
            logger.warning("Config file not found: %s", config_path)
            data = {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        logger.error("Error loading config: %s", e)
        raise ConfigError(f"Malformed YAML in {config_path}: {e}", field="<file>", line=line) from e
    except OSError as e:
        logger.error("Error loading config: %s", e)
        raise ConfigError(f"Cannot read config file {config_path}: {e}") from e

    # Unknown keys are checked on the raw file before defaults can mask them
    validate_config(data, sections=sections, line_map=line_map)
    config = merge_with_defaults(data)
    validate_config(config, line_map=line_map)

    _CONFIG_CACHE = config
    _LINE_MAP = line_map
    logger.info("Configuration loaded successfully")


def get_config() -> Dict[str, Dict[str, Any]]:
    """
    Get the current configuration.

    Returns:
        dict: Current configuration
    """
    if _CONFIG_CACHE is None:
        load_config()
    return _CONFIG_CACHE


def reload_config(config_path: str = "config.yaml", sections: Optional[Iterable[str]] = None) -> None:
    """
    Force reload of configuration.

    Args:
        config_path: Path to configuration file
        sections: Sections whose required keys must be present
    """
    global _CONFIG_CACHE
    _CONFIG_CACHE = None
    load_config(config_path, sections=sections)


def apply_overrides(
    config: Dict[str, Dict[str, Any]],
    seed: Optional[int] = None,
    run_dir: Optional[str] = None,
    log_level: Optional[str] = None,
) -> Dict[str, Dict[str, Any]]:
    """Return a copy of ``config`` with command-line overrides applied to ``global``."""
    resolved = copy.deepcopy(config)
    if seed is not None:
        resolved["global"]["seed"] = seed
    if run_dir is not None:
        resolved["global"]["run_dir"] = run_dir
    if log_level is not None:
        resolved["global"]["log_level"] = log_level
    validate_config(resolved)
    return resolved


def dump_config(config: Dict[str, Any], path: Union[str, Path]) -> None:
    """Write the resolved configuration as YAML."""
    Path(path).write_text(yaml.safe_dump(config, default_flow_style=False, sort_keys=True), encoding="utf-8")


@contextmanager
def section_values(section: str, values: Mapping[str, Any], field: Optional[str] = None) -> Iterator[None]:
    """
    Report value errors raised while building typed settings from ``section`` as ``ConfigError``.

    The field is ``field`` when given, otherwise the first word of the message
    when it names a key of ``values``, otherwise the section itself.

    >>> with section_values("distill", {"ema_decay": 1.5}):  # doctest: +ELLIPSIS
    ...     raise ValueError("ema_decay must be in [0, 1], got 1.5")
    Traceback (most recent call last):
    ...
    crossmag.utils.errors.ConfigError: ema_decay must be in [0, 1], got 1.5 [distill.ema_decay...]
    """
    try:
        yield
    except ConfigError:
        raise
    except ValueError as e:
        message = str(e)
        key = field or message.split(" ", 1)[0]
        dotted = f"{section}.{key}" if key in values else section
        raise ConfigError(message, field=dotted, line=_LINE_MAP.get(dotted)) from e
