#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Exception hierarchy shared across crossmag subpackages.

The CLI maps these bases onto process exit codes (see ``crossmag.main``).
"""

from pathlib import Path
from typing import Optional, Union


class CrossmagError(Exception):
    """Base exception for crossmag errors."""


class ConfigError(CrossmagError, ValueError):
    """Invalid configuration value, key or file."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if field is not None:
            location = f" [{field}"
            if line is not None:
                location += f", line {line}"
            location += "]"
        super().__init__(f"{message}{location}")
        self.field = field
        self.line = line


class MissingArtifactError(CrossmagError):
    """A prerequisite artifact from an earlier stage does not exist."""

    def __init__(self, path: Union[str, Path], hint: str = ""):
        message = f"Missing prerequisite artifact: {path}"
        if hint:
            message += f" ({hint})"
        super().__init__(message)
        self.path = Path(path)


class InvariantViolation(CrossmagError):
    """A runtime invariant failed; results must not be trusted."""
