#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Logging Setup Module
--------------------

Provides the logging configuration shared by every crossmag module.

Example:
    from crossmag.utils.logging_setup import get_logger
    logger = get_logger(__name__)
    logger.info("Tessellated %d slides", 4)

Doctest:
    >>> from crossmag.utils.logging_setup import get_logger
    >>> logger = get_logger("test")
    >>> logger.info("Test message")  # Should print to stderr
"""

import logging
from pathlib import Path
from typing import Optional, Union

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

_FILE_HANDLER: Optional[logging.FileHandler] = None


def get_logger(name: str) -> logging.Logger:
    """
    Get a configured logger instance.

    Args:
        name (str): The name of the logger (usually __name__).

    Returns:
        logging.Logger: A logger instance with basic configuration.
    """
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT, datefmt=DATE_FORMAT)
    return logging.getLogger(name)


def configure_logging(level: Union[str, int] = "INFO", log_file: Optional[Path] = None) -> None:
    """
    Set the root level and optionally mirror all records to a run log file.

    Args:
        level: Level name (e.g. "DEBUG") or numeric level
        log_file: File receiving a copy of every record; replaces any previous run log

    Raises:
        ValueError: If the level name is unknown
    """
    global _FILE_HANDLER

    if isinstance(level, str):
        numeric = logging.getLevelName(level.upper())
        if not isinstance(numeric, int):
            raise ValueError(f"Unknown log level: {level}")
        level = numeric

    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=DATE_FORMAT)
    root = logging.getLogger()
    root.setLevel(level)

    if _FILE_HANDLER is not None:
        root.removeHandler(_FILE_HANDLER)
        _FILE_HANDLER.close()
        _FILE_HANDLER = None

    if log_file is not None:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        _FILE_HANDLER = logging.FileHandler(log_file, encoding="utf-8")
        _FILE_HANDLER.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        root.addHandler(_FILE_HANDLER)
