#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Embedding export.

A matrix is written as raw little-endian float32 rows (``<name>.f32``) with a
YAML sidecar (``<name>.yaml``) holding at least ``n`` and ``d``. Reading back
returns the written values bit for bit.
"""

from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import yaml

from ..utils.logging_setup import get_logger

logger = get_logger(__name__)

MATRIX_SUFFIX = ".f32"
SIDECAR_SUFFIX = ".yaml"
_DTYPE = np.dtype("<f4")


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(SIDECAR_SUFFIX)


def export_embeddings(
    matrix: np.ndarray, path: Union[str, Path], metadata: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write an [N, d] matrix and its sidecar.

    Args:
        matrix: Embeddings, cast to float32
        path: Output path; the ``.f32`` suffix is enforced
        metadata: Extra sidecar fields

    Returns:
        Path: The matrix file

    Raises:
        ValueError: If the matrix is empty or not two-dimensional
        OSError: On write failure
    """
    array = np.asarray(matrix)
    if array.ndim != 2:
        raise ValueError(f"Expected an [N, d] matrix, got shape {array.shape}")
    if array.shape[0] == 0 or array.shape[1] == 0:
        raise ValueError("Refusing to export an empty embedding matrix")

    path = Path(path).with_suffix(MATRIX_SUFFIX)
    path.parent.mkdir(parents=True, exist_ok=True)
    sidecar = {**(metadata or {}), "n": int(array.shape[0]), "d": int(array.shape[1]), "dtype": "float32le"}
    np.ascontiguousarray(array, dtype=_DTYPE).tofile(path)
    sidecar_path(path).write_text(yaml.safe_dump(sidecar, sort_keys=True), encoding="utf-8")
    logger.debug("Exported %d x %d embeddings to %s", array.shape[0], array.shape[1], path)
    return path


def read_embeddings(path: Union[str, Path]) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    Read a matrix written by :func:`export_embeddings`.

    Raises:
        FileNotFoundError: If the matrix or sidecar is missing
        ValueError: If the byte count disagrees with the sidecar
    """
    path = Path(path).with_suffix(MATRIX_SUFFIX)
    sidecar = yaml.safe_load(sidecar_path(path).read_text(encoding="utf-8"))
    data = np.fromfile(path, dtype=_DTYPE)
    n, d = int(sidecar["n"]), int(sidecar["d"])
    if data.size != n * d:
        raise ValueError(f"{path} holds {data.size} values, sidecar says {n} x {d}")
    return data.reshape(n, d), sidecar
